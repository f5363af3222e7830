"""Per-point descriptor retrieval and part-level matching accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, apply_rotation
from .netkit.model import Model, descriptor


@dataclass(frozen=True)
class DescriptorDB:
    """Flat descriptor table with one ``(object, point, part)`` record per row."""

    descriptors: np.ndarray
    object_ids: np.ndarray
    point_ids: np.ndarray
    parts: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("descriptors must be a 2-D array")
        if not np.all(np.isfinite(d)):
            raise ValueError("descriptors must be finite")
        cols = [np.asarray(c, dtype=np.int64).reshape(-1) for c in (self.object_ids, self.point_ids, self.parts)]
        if any(c.shape[0] != d.shape[0] for c in cols):
            raise ValueError("one record per descriptor required")
        for name, val in zip(("descriptors", "object_ids", "point_ids", "parts"), [d, *cols]):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def records(self):
        return zip(self.object_ids.tolist(), self.point_ids.tolist(), self.parts.tolist())


def build_descriptor_db(model: Model, clouds, object_ids=None) -> DescriptorDB:
    """Featurize unrotated clouds and stack their per-point descriptors."""
    clouds = list(clouds)
    if object_ids is None:
        object_ids = range(len(clouds))
    descs, objs, pts, parts = [], [], [], []
    for oid, cloud in zip(object_ids, clouds):
        if cloud.labels is None:
            raise ValueError("database clouds need part labels")
        descs.append(descriptor(model, cloud))
        objs.append(np.full(len(cloud), oid))
        pts.append(np.arange(len(cloud)))
        parts.append(cloud.labels)
    if not descs:
        return DescriptorDB(np.zeros((0, 0)), [], [], [])
    return DescriptorDB(np.concatenate(descs), np.concatenate(objs), np.concatenate(pts), np.concatenate(parts))


@dataclass(frozen=True)
class Correspondences:
    """``k`` database matches for each query point (arrays are ``(Q, k)``)."""

    query_parts: np.ndarray
    db_index: np.ndarray
    distances: np.ndarray
    db_objects: np.ndarray
    db_points: np.ndarray
    db_parts: np.ndarray


def nearest_neighbors(queries: np.ndarray, base: np.ndarray, k: int, chunk: int = 16):
    """Exact L2 k-nearest neighbors; ties resolve to the lower database index."""
    n = base.shape[0]
    if n == 0:
        raise ValueError("descriptor database is empty")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    idx = np.empty((queries.shape[0], k), dtype=np.int64)
    dist = np.empty((queries.shape[0], k))
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        d = np.sqrt(np.sum((q[:, None, :] - base[None, :, :]) ** 2, axis=-1))
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[start : start + chunk] = order
        dist[start : start + chunk] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def match_points(query_cloud: PointCloud, R_applied, model: Model, db: DescriptorDB, k: int = 1) -> Correspondences:
    """Rotate the query by ``R_applied`` (``None`` for no rotation) and retrieve matches."""
    if len(db) == 0:
        raise ValueError("descriptor database is empty")
    if query_cloud.labels is None:
        raise ValueError("query cloud needs part labels")
    cloud = query_cloud if R_applied is None else apply_rotation(R_applied, query_cloud)
    q = descriptor(model, cloud)
    if q.shape[1] != db.dim:
        raise ValueError("descriptor dimension differs from the database")
    idx, dist = nearest_neighbors(q, db.descriptors, k)
    return Correspondences(
        query_parts=np.asarray(query_cloud.labels),
        db_index=idx,
        distances=dist,
        db_objects=db.object_ids[idx],
        db_points=db.point_ids[idx],
        db_parts=db.parts[idx],
    )


def matching_accuracy(corr: Correspondences) -> float:
    """Share of matched pairs whose two points carry the same part label."""
    same = corr.db_parts == np.asarray(corr.query_parts).reshape(-1, 1)
    if same.size == 0:
        raise ValueError("no correspondences")
    return int(same.sum()) / same.size
