"""Acceptance criteria, one test per criterion, each reporting PASS/FAIL."""

import time

import numpy as np
import pytest

from sphvox.cli import invariance_deviations, probe_model
from sphvox.geometry import (
    PointCloud,
    haar_random_matrices,
    haar_random_rotation,
    make_rng,
    normalize_cloud,
    rot_from_zyz,
)
from sphvox.harmonics import beta_samples, quadrature_weights, random_bandlimited, so3_forward, so3_inverse
from sphvox.matching import build_descriptor_db, match_points, matching_accuracy
from sphvox.netkit import tape as T
from sphvox.netkit.data import DatasetParams, gen_synthetic_dataset
from sphvox.netkit.experiments import (
    CLASSIFICATION,
    SEGMENTATION,
    ablation_config,
    run_evaluation,
    run_training,
    test_dataset as held_out_dataset,
)
from sphvox.netkit.model import ModelConfig, init_model, loss_and_grads
from sphvox.resample import stencil
from sphvox.sphgrid import (
    GridSpec,
    SphericalVoxelGrid,
    build_signal,
    coefficient_of_variation,
    signal_statistics,
)
from sphvox.svc import SvcKernel, ring_mask, svc_forward, svc_oracle

from test_cli import _session, _snapshot, prepare_workdir
from test_netkit import fd_check, randomize_biases, run_value


def test_c1_so3_round_trip(acceptance):
    t0 = time.perf_counter()
    rng = make_rng(101)
    f = random_bandlimited(8, rng, channels=4)
    err = np.abs(so3_inverse(so3_forward(f)) - f).max()
    dt = time.perf_counter() - t0
    ok = acceptance(1, err < 1e-9 and dt < 5.0, f"B=8 round trip max abs error {err:.2e} (< 1e-9, < 5 s)", dt)
    assert ok


def test_c2_convolution_oracle(acceptance):
    t0 = time.perf_counter()
    rng = make_rng(102)
    spec = GridSpec(4, 8, 0.1)
    f = random_bandlimited(4, rng, channels=100)
    psi = random_bandlimited(4, rng, channels=100)
    full = np.ones(spec.shape, bool)
    got = np.stack([
        svc_forward(SphericalVoxelGrid(spec, f[i : i + 1]), SvcKernel(spec, psi[i][None, None], full)).data[0]
        for i in range(100)
    ])
    ref = svc_oracle(f, psi)
    rel = (np.abs(got - ref).max(axis=(1, 2, 3)) / np.abs(ref).max(axis=(1, 2, 3))).max()
    dt = time.perf_counter() - t0
    ok = acceptance(2, rel < 1e-6 and dt < 60.0, f"100 pairs at B=4, worst relative error {rel:.2e} (< 1e-6)", dt)
    assert ok


def test_c3_rotation_invariance(acceptance):
    t0 = time.perf_counter()
    cloud = normalize_cloud(gen_synthetic_dataset(DatasetParams(per_class=1), seed=0).clouds[1])
    exact = probe_model(8, 1, 0.5, True, seed=0)
    pt_exact, pool_exact = invariance_deviations(exact, cloud, 20, True, make_rng(0))
    means = {}
    for B in (8, 16):
        pt, pool = invariance_deviations(probe_model(B, 1, 0.5, True, seed=0), cloud, 50, False, make_rng(1))
        means[B] = (pt.mean(), pool.mean())
    dt = time.perf_counter() - t0
    ok = (pt_exact.max() < 1e-5 and pool_exact.max() < 1e-6
          and means[16][0] < means[8][0] and means[16][1] < means[8][1])
    detail = (f"grid-exact point {pt_exact.max():.1e} pooled {pool_exact.max():.1e}; "
              f"haar mean point B8 {means[8][0]:.5f} B16 {means[16][0]:.5f}, "
              f"pooled B8 {means[8][1]:.4f} B16 {means[16][1]:.4f}")
    assert acceptance(3, ok, detail, dt)


HAAR_FUNCTIONS = [
    lambda R: R[:, 0, 0],
    lambda R: R[:, 2, 2] ** 2,
    lambda R: np.trace(R, axis1=1, axis2=2) ** 2,
    lambda R: np.exp(R[:, 0, 1]),
    lambda R: np.cos(3 * R[:, 1, 2]) + R[:, 2, 0] * R[:, 0, 2],
]


def test_c4_haar_invariance(acceptance):
    t0 = time.perf_counter()
    rng = make_rng(104)
    n = 100_000
    shifts = [rot_from_zyz(*rng.uniform(0, 2 * np.pi, 3) * np.array([1, 0.5, 1])).matrix for _ in range(5)]
    base = haar_random_matrices(rng, n)
    worst = 0.0
    for g in HAAR_FUNCTIONS:
        ref = g(base)
        for Rp in shifts:
            moved = g(Rp @ haar_random_matrices(rng, n))
            se = np.sqrt(ref.var(ddof=1) / n + moved.var(ddof=1) / n)
            worst = max(worst, abs(moved.mean() - ref.mean()) / se)
    dt = time.perf_counter() - t0
    assert acceptance(4, worst < 3.0, f"25 comparisons at 1e5 samples, worst gap {worst:.2f} SE (< 3)", dt)


def test_c5_daas_correction(acceptance):
    t0 = time.perf_counter()
    rng = make_rng(105)
    v = rng.normal(size=(100_000, 3))
    shell = PointCloud(v / np.linalg.norm(v, axis=1, keepdims=True) * (1 - 1e-9))
    spec = GridSpec(8, 32, 1 / 32)
    cv = {on: coefficient_of_variation(signal_statistics(build_signal(shell, spec, daas_enabled=on))[0])
          for on in (True, False)}
    quad = max(abs(np.sum(quadrature_weights(B) * np.cos(beta_samples(B)) ** 2) - 2 / 3) for B in (4, 8, 16, 32))
    dt = time.perf_counter() - t0
    ok = cv[True] < cv[False] and quad < 1e-12
    detail = f"ring-mean CV with DAAS {cv[True]:.4f}, without {cv[False]:.4f}; quadrature error {quad:.1e}"
    assert acceptance(5, ok, detail, dt)


def _on_mask(f, w, grad, mask):
    """Restrict a kernel check to the unmasked entries, the only free parameters."""
    full = np.broadcast_to(mask, w.shape)

    def g(v):
        out = np.zeros_like(w)
        out[full] = v
        return f(out)

    return g, w[full], grad[full]


def _dot_loss(tape, y, u):
    return tape.push("dot", (y,), np.sum(y.value * u), lambda g: (g * u,))


def test_c6_gradient_checks(acceptance):
    t0 = time.perf_counter()
    rng = make_rng(106)
    spec = GridSpec(4, 8, 0.2)
    mask = ring_mask(spec)
    clouds = [PointCloud(0.9 * normalize_cloud(PointCloud(rng.normal(size=(64, 3)))).points) for _ in range(2)]
    sts = [stencil(spec, c) for c in clouds]
    checks = []

    def check(name, f, x, grad, **kw):
        fd_check(f, x, grad, rng, **kw)
        checks.append(name)

    # SVC, both arguments
    x0 = rng.standard_normal((2, 2) + spec.shape)
    w0 = np.where(mask, rng.standard_normal((3, 2) + spec.shape), 0.0)
    u = rng.standard_normal((2, 3) + spec.shape)

    def svc_run(xv, wv):
        tape = T.Tape()
        x, w = T.Var(xv, "x", True), T.Var(wv, "w", True)
        loss = _dot_loss(tape, T.svc(tape, x, w, mask, bandlimit=3), u)
        return float(loss.value), tape.backward(loss, [x, w])

    g = svc_run(x0, w0)[1]
    check("svc input", lambda v: svc_run(v, w0)[0], x0, g["x"], rtol=1e-6)
    assert np.all(g["w"][:, :, ~mask] == 0)
    check("svc kernel", *_on_mask(lambda v: svc_run(x0, v)[0], w0, g["w"], mask), rtol=1e-6)

    # trilinear re-sampling at N = 64
    u = rng.standard_normal((2, 64, 2))

    def tri_run(v):
        tape = T.Tape()
        x = T.Var(v, "x", True)
        loss = _dot_loss(tape, T.trilinear(tape, x, sts), u)
        return float(loss.value), tape.backward(loss, [x])["x"]

    check("trilinear", run_value(tri_run), x0, tri_run(x0)[1], samples=30, rtol=1e-6)

    # fully connected layer
    a0, W0, b0 = rng.standard_normal((64, 5)), rng.standard_normal((5, 4)), rng.standard_normal(4)
    u = rng.standard_normal((64, 4))

    def fc_run(av, Wv, bv):
        tape = T.Tape()
        a, W, b = T.Var(av, "a", True), T.Var(Wv, "W", True), T.Var(bv, "b", True)
        loss = _dot_loss(tape, T.linear(tape, a, W, b), u)
        return float(loss.value), tape.backward(loss, [a, W, b])

    g = fc_run(a0, W0, b0)[1]
    check("fc input", lambda v: fc_run(v, W0, b0)[0], a0, g["a"], rtol=1e-6)
    check("fc weight", lambda v: fc_run(a0, v, b0)[0], W0, g["W"], rtol=1e-6)
    check("fc bias", lambda v: fc_run(a0, W0, v)[0], b0, g["b"], rtol=1e-6)

    # ReLU away from its kink
    r0 = rng.standard_normal(200)
    r0[np.abs(r0) < 0.05] = 0.5
    u = rng.standard_normal(200)

    def relu_run(v):
        tape = T.Tape()
        x = T.Var(v, "x", True)
        loss = _dot_loss(tape, T.relu(tape, x), u)
        return float(loss.value), tape.backward(loss, [x])["x"]

    check("relu", run_value(relu_run), r0, relu_run(r0)[1], eps=1e-5, rtol=1e-6)

    # global max pooling
    u = rng.standard_normal((2, 2))

    def pool_run(v):
        tape = T.Tape()
        x = T.Var(v, "x", True)
        loss = _dot_loss(tape, T.global_maxpool(tape, x), u)
        return float(loss.value), tape.backward(loss, [x])["x"]

    check("max pool", run_value(pool_run), x0, pool_run(x0)[1], samples=40, eps=1e-6, rtol=1e-6)

    # cross-entropy
    z0 = rng.standard_normal((2, 64, 4))
    labels = rng.integers(0, 4, (2, 64))

    def ce_run(v):
        tape = T.Tape()
        z = T.Var(v, "z", True)
        loss = T.cross_entropy(tape, z, labels)
        return float(loss.value), tape.backward(loss, [z])["z"]

    check("cross-entropy", run_value(ce_run), z0, ce_run(z0)[1], samples=30)

    # end to end through both heads
    ds = gen_synthetic_dataset(DatasetParams(per_class=1, n_points=64), seed=6)
    for head in ("classification", "segmentation"):
        cfg = ModelConfig(head=head, bandwidth=4, h_res=4, delta=0.3, channels=(3, 2), bandlimits=(4, 3), fc=(5,))
        model = randomize_biases(init_model(cfg), rng)
        clouds_h = ds.clouds[:2]
        targets = ds.classes[:2] if head == "classification" else np.stack([c.labels for c in clouds_h])
        _, grads, _ = loss_and_grads(model, clouds_h, targets)
        for name in ("svc0.kernel", "fc0.weight"):
            def loss_at(v, name=name):
                m = model.copy()
                m.params[name] = v
                return loss_and_grads(m, clouds_h, targets)[0]

            args = (loss_at, model.params[name], grads[name])
            if name.startswith("svc"):
                args = _on_mask(*args, model.mask)
            check(f"{head} {name}", *args, samples=8, max_kinks=2)
    dt = time.perf_counter() - t0
    assert acceptance(6, dt < 120.0, f"{len(checks)} finite-difference checks at B=4, N=64 (< 2 min)", dt)


def test_c7_classification_protocol(acceptance):
    t0 = time.perf_counter()
    model, _ = run_training(CLASSIFICATION)
    nr = run_evaluation(model, CLASSIFICATION, "none").accuracy
    ar = run_evaluation(model, CLASSIFICATION, "haar").accuracy
    dt = time.perf_counter() - t0
    ok = ar >= 0.90 and abs(nr - ar) < 0.05 and dt < 1800
    assert acceptance(7, ok, f"train NR, accuracy NR {nr:.3f} AR {ar:.3f} (AR >= 0.90, gap < 0.05)", dt)


@pytest.fixture(scope="module")
def seg_runs():
    """Segmentation preset and its three ablated variants, trained once."""
    t0 = time.perf_counter()
    variants = {
        "base": SEGMENTATION,
        "B=4": ablation_config(SEGMENTATION, "bandwidth", 4),
        "h_res=1": ablation_config(SEGMENTATION, "h-res", 1),
        "DAAS off": ablation_config(SEGMENTATION, "daas", False),
    }
    models = {k: run_training(exp)[0] for k, exp in variants.items()}
    return variants, models, time.perf_counter() - t0


def test_c8_ablation_directions(acceptance, seg_runs):
    variants, models, train_time = seg_runs
    t0 = time.perf_counter()
    miou = {k: run_evaluation(models[k], exp, "haar").miou_instance for k, exp in variants.items()}
    dt = train_time + time.perf_counter() - t0
    ok = miou["base"] >= max(miou["B=4"], miou["h_res=1"], miou["DAAS off"])
    detail = ", ".join(f"{k} {v:.3f}" for k, v in miou.items()) + " (AR instance mIoU, base must lead)"
    assert acceptance(8, ok, detail, dt)


def test_c9_matching(acceptance, seg_runs):
    _, models, _ = seg_runs
    t0 = time.perf_counter()
    model = models["base"]
    ds = held_out_dataset(SEGMENTATION)
    objects = [ds.clouds[i] for c in range(4) for i in np.flatnonzero(ds.classes == c)[:2]]
    db = build_descriptor_db(model, objects)
    rng = make_rng(109)
    self_acc = [matching_accuracy(match_points(o, None, model, db)) for o in objects]
    rot_acc = [matching_accuracy(match_points(o, haar_random_rotation(rng), model, db)) for o in objects]
    dt = time.perf_counter() - t0
    ok = min(self_acc) == 1.0 and np.mean(rot_acc) >= 0.85
    detail = f"self-retrieval {min(self_acc):.3f}, Haar-rotated duplicates {np.mean(rot_acc):.3f} (>= 0.85)"
    assert acceptance(9, ok, detail, dt)


def test_c10_cli_determinism(acceptance, tmp_path, monkeypatch, capsys):
    t0 = time.perf_counter()
    snaps = []
    for run_dir in ("a", "b"):
        d = tmp_path / run_dir
        d.mkdir()
        monkeypatch.chdir(d)
        prepare_workdir(d)
        snaps.append((_session(capsys), _snapshot(d)))
    (out_a, files_a), (out_b, files_b) = snaps
    same = out_a == out_b and files_a == files_b
    dt = time.perf_counter() - t0
    detail = f"{len(out_a)} commands, {len(files_a)} output files byte-identical across two runs"
    assert acceptance(10, same, detail, dt)
