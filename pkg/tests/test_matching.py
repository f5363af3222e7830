import numpy as np
import pytest

from sphvox.geometry import PointCloud, haar_random_rotation, make_rng, rot_z
from sphvox.matching import (
    Correspondences,
    DescriptorDB,
    build_descriptor_db,
    match_points,
    matching_accuracy,
    nearest_neighbors,
)
from sphvox.netkit.data import DatasetParams, gen_synthetic_dataset
from sphvox.netkit.model import ModelConfig, init_model


@pytest.fixture(scope="module")
def model():
    cfg = ModelConfig(head="segmentation", bandwidth=4, h_res=4, delta=0.3, channels=(8,), fc=(32,), seed=3)
    m = init_model(cfg)
    # positive biases keep the random ReLU features alive, so descriptors are distinct
    rng = make_rng(8)
    for name in m.params:
        if name.endswith(".bias"):
            m.params[name] = rng.uniform(0.2, 0.5, m.params[name].shape)
    return m


@pytest.fixture(scope="module")
def clouds():
    return gen_synthetic_dataset(DatasetParams(per_class=1, n_points=64), seed=11).clouds


@pytest.fixture(scope="module")
def db(model, clouds):
    return build_descriptor_db(model, clouds)


def test_db_size_and_records(db, clouds):
    assert len(db) == sum(len(c) for c in clouds)
    recs = list(db.records())
    assert recs[0] == (0, 0, int(clouds[0].labels[0]))
    assert recs[-1] == (len(clouds) - 1, len(clouds[-1]) - 1, int(clouds[-1].labels[-1]))


def test_descriptors_unit_norm(model):
    many = gen_synthetic_dataset(DatasetParams(per_class=3, n_points=48), seed=2).clouds[:10]
    d = build_descriptor_db(model, many).descriptors
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-6)


def test_db_is_read_only(db):
    with pytest.raises(ValueError):
        db.descriptors[0, 0] = 1.0


def test_duplicate_object_gives_zero_distance(model, clouds):
    db2 = build_descriptor_db(model, [clouds[0], clouds[0]])
    corr = match_points(clouds[0], None, model, db2, k=2)
    np.testing.assert_array_equal(corr.distances, 0.0)
    # ties resolve to the lower index, i.e. the first copy
    np.testing.assert_array_equal(corr.db_objects[:, 0], 0)
    np.testing.assert_array_equal(corr.db_objects[:, 1], 1)


def test_self_match_is_exact(model, clouds, db):
    for oid, cloud in enumerate(clouds):
        corr = match_points(cloud, None, model, db)
        assert matching_accuracy(corr) == 1.0
        np.testing.assert_array_equal(corr.distances, 0.0)
        np.testing.assert_array_equal(corr.db_objects[:, 0], oid)
        np.testing.assert_array_equal(corr.db_points[:, 0], np.arange(len(cloud)))


def test_grid_rotated_query_matches_itself(model, clouds, db):
    B = model.config.bandwidth
    for m in (1, 3, 5):
        corr = match_points(clouds[1], rot_z(2 * np.pi * m / (2 * B)), model, db)
        assert matching_accuracy(corr) >= 0.99
        assert np.mean(corr.db_points[:, 0] == np.arange(len(clouds[1]))) >= 0.99


def test_grid_rotations_match_at_least_as_well_as_haar(model, clouds, db):
    rng = make_rng(4)
    grid, haar = [], []
    for cloud in clouds:
        grid.append(matching_accuracy(match_points(cloud, rot_z(np.pi / 2), model, db)))
        haar.append(matching_accuracy(match_points(cloud, haar_random_rotation(rng), model, db)))
    assert np.mean(grid) >= np.mean(haar)


def _corr(query_parts, db_parts):
    db_parts = np.asarray(db_parts)
    z = np.zeros_like(db_parts)
    return Correspondences(np.asarray(query_parts), z, z.astype(float), z, z, db_parts)


@pytest.mark.parametrize(
    "query, matched, expected",
    [
        ([0, 1], [[0], [1]], 1.0),
        ([0, 1], [[1], [0]], 0.0),
        ([0, 1], [[0, 0], [1, 2]], 0.75),
    ],
)
def test_matching_accuracy_cases(query, matched, expected):
    assert matching_accuracy(_corr(query, matched)) == expected


def test_matching_accuracy_rejects_empty():
    with pytest.raises(ValueError):
        matching_accuracy(_corr(np.zeros(0, int), np.zeros((0, 1), int)))


def test_nearest_neighbors_against_brute_force(rng):
    base = rng.normal(size=(50, 5))
    q = rng.normal(size=(7, 5))
    idx, dist = nearest_neighbors(q, base, 3, chunk=2)
    full = np.linalg.norm(q[:, None] - base[None], axis=-1)
    np.testing.assert_array_equal(idx, np.argsort(full, axis=1)[:, :3])
    np.testing.assert_allclose(dist, np.sort(full, axis=1)[:, :3], rtol=1e-12)


def test_errors(model, clouds, db):
    with pytest.raises(ValueError, match="empty"):
        match_points(clouds[0], None, model, build_descriptor_db(model, []))
    with pytest.raises(ValueError):
        match_points(clouds[0], None, model, db, k=0)
    with pytest.raises(ValueError):
        match_points(clouds[0], None, model, db, k=len(db) + 1)
    with pytest.raises(ValueError, match="labels"):
        match_points(PointCloud(clouds[0].points), None, model, db)
    with pytest.raises(ValueError, match="labels"):
        build_descriptor_db(model, [PointCloud(clouds[0].points)])
    with pytest.raises(ValueError):
        DescriptorDB(np.zeros((2, 3)), [0], [0, 1], [0, 1])
    with pytest.raises(ValueError):
        DescriptorDB(np.full((1, 3), np.nan), [0], [0], [0])
