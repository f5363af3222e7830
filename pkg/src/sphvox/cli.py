"""``sphvox`` command-line interface.

Exit codes: 0 success, 2 unreadable or malformed input, 3 invalid
parameters, 4 model and grid disagree, 5 training diverged.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import apply_rotation, make_rng, normalize_cloud, rot_z
from .io import (
    TensorFormatError,
    XyzFormatError,
    atomic_write,
    read_tensors,
    read_xyz,
    write_tensors,
    write_xyz,
)
from .matching import DescriptorDB, build_descriptor_db, match_points, matching_accuracy
from .netkit.data import FAMILIES, DatasetParams, gen_synthetic_dataset
from .netkit.experiments import (
    ABLATION_AXES,
    experiment_from_dict,
    run_ablation,
    run_evaluation,
    run_training,
)
from .netkit.model import (
    Model,
    ModelConfig,
    global_feature,
    init_model,
    kernel_init_scale,
    model_from_tensors,
    model_tensors,
    point_features,
)
from .netkit.train import TrainingDiverged
from .sphgrid import GridSpec, build_signal, voxel_centers

EXIT_PARSE, EXIT_PARAMS, EXIT_MISMATCH, EXIT_DIVERGED = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _read_cloud(path) -> geometry.PointCloud:
    try:
        return read_xyz(path)
    except (XyzFormatError, OSError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from exc


def _load_model(path) -> Model:
    try:
        tensors = read_tensors(path)
    except (TensorFormatError, OSError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from exc
    try:
        return model_from_tensors(tensors)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: not a model checkpoint ({exc})") from exc


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(EXIT_PARSE, f"{path}: config must be a JSON object")
    return data


def _emit(lines, out_path=None) -> None:
    text = "".join(line + "\n" for line in lines)
    sys.stdout.write(text)
    if out_path:
        atomic_write(out_path, text)


def _check_normalized(cloud):
    if np.sqrt((cloud.points**2).sum(axis=1)).max() > 1.0 + 1e-9:
        raise CliError(EXIT_PARAMS, "points must lie in the unit ball (pass --normalize)")


# ---------------------------------------------------------------------------
# featurize


def _grid_from_args(args, model: Model | None) -> GridSpec:
    if model is None:
        return GridSpec(args.bandwidth or 8, args.h_res or 16, args.delta or 0.2)
    cfg = model.config
    for flag, given, have in (("--bandwidth", args.bandwidth, cfg.bandwidth),
                              ("--h-res", args.h_res, cfg.h_res),
                              ("--delta", args.delta, cfg.delta)):
        if given is not None and given != have:
            raise CliError(EXIT_MISMATCH, f"{flag} {given} disagrees with the model ({have})")
    if args.no_daas and cfg.daas:
        raise CliError(EXIT_MISMATCH, "--no-daas disagrees with the model")
    return cfg.grid_spec


def cmd_featurize(args) -> int:
    cloud = _read_cloud(args.input)
    model = _load_model(args.model) if args.model else None
    spec = _grid_from_args(args, model)
    if args.normalize:
        cloud = normalize_cloud(cloud)
    _check_normalized(cloud)
    if model is None:
        grid = build_signal(cloud, spec, daas_enabled=not args.no_daas)
        write_tensors(args.out, {"signal": grid.data})
    else:
        write_tensors(args.out, {"features": point_features(model, cloud)})
    return 0


# ---------------------------------------------------------------------------
# verify-invariance


def probe_model(bandwidth: int, h_res: int, delta: float, daas: bool, seed: int, channels: int = 4) -> Model:
    """Fixed one-layer featurizer whose ring filters are low-order cosines in alpha.

    The filter profile does not depend on the bandwidth, so runs at
    different ``B`` discretize the same operator.
    """
    cfg = ModelConfig(head="segmentation", bandwidth=bandwidth, h_res=h_res, delta=delta, daas=daas,
                      channels=(channels,), fc=(channels,), seed=seed)
    model = init_model(cfg)
    rng = make_rng(seed)
    a, _, _ = voxel_centers(cfg.feature_spec)
    freq = np.arange(channels) % 3
    phase = rng.uniform(0.0, 2 * np.pi, channels)
    profile = 1.0 + np.cos(freq[:, None] * a[None, :] + phase[:, None])
    w = np.zeros_like(model.params["svc0.kernel"])
    w[:, 0] = profile[:, :, None, None]
    model.params["svc0.kernel"] = np.where(model.mask, w, 0.0) * kernel_init_scale(cfg.feature_spec, 1)
    return model


def invariance_deviations(model: Model, cloud, trials: int, grid_exact: bool, rng):
    """Relative deviations of per-point and pooled features over ``trials`` rotations."""
    B = model.config.bandwidth
    y0 = point_features(model, cloud)
    g0 = global_feature(model, cloud)
    point, pooled = [], []
    for _ in range(trials):
        if grid_exact:
            m = int(rng.integers(1, 2 * B))
            R = rot_z(2 * np.pi * m / (2 * B))
        else:
            R = geometry.haar_random_rotation(rng)
        rotated = apply_rotation(R, cloud)
        y = point_features(model, rotated)
        g = global_feature(model, rotated)
        point.append(np.linalg.norm(y - y0) / max(np.linalg.norm(y0), 1e-300))
        pooled.append(np.linalg.norm(g - g0) / max(np.linalg.norm(g0), 1e-300))
    return np.asarray(point), np.asarray(pooled)


def cmd_verify_invariance(args) -> int:
    cloud = normalize_cloud(_read_cloud(args.input))
    if args.trials < 0:
        raise CliError(EXIT_PARAMS, "--trials must be >= 0")
    if args.model:
        model = _load_model(args.model)
        _grid_from_args(args, model)
    else:
        model = probe_model(args.bandwidth or 8, args.h_res or 1, args.delta or 0.5, not args.no_daas, args.seed)
    point, pooled = invariance_deviations(model, cloud, args.trials, args.grid_exact, make_rng(args.seed))

    def stats(v):
        return (float(v.max()), float(v.mean())) if v.size else (0.0, 0.0)

    pmax, pmean = stats(point)
    gmax, gmean = stats(pooled)
    mode = "grid-exact" if args.grid_exact else "haar"
    print(f"mode={mode}\tbandwidth={model.config.bandwidth}\ttrials={args.trials}\t"
          f"point_max={pmax:.6e}\tpoint_mean={pmean:.6e}\tglobal_max={gmax:.6e}\tglobal_mean={gmean:.6e}")
    return 0


# ---------------------------------------------------------------------------
# train / eval / ablate


def _experiment(args, task=None):
    try:
        return experiment_from_dict(task or args.task, _read_config(args.config), seed=args.seed)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_PARAMS, str(exc)) from exc


def cmd_train(args) -> int:
    exp = _experiment(args)
    if args.epochs is not None:
        if args.epochs < 0:
            raise CliError(EXIT_PARAMS, "--epochs must be >= 0")
        exp = replace(exp, epochs=args.epochs)
    seg = exp.model.head == "segmentation"
    header = "epoch\tloss\taccuracy" + ("\tmiou" if seg else "")
    print(header, flush=True)
    lines = [header]

    def report(e):
        line = f"{e.epoch}\t{_fmt(e.loss)}\t{_fmt(e.accuracy)}" + (f"\t{_fmt(e.miou)}" if seg else "")
        lines.append(line)
        print(line, flush=True)

    try:
        model, log = run_training(exp, report)
    except TrainingDiverged as exc:
        raise CliError(EXIT_DIVERGED, str(exc)) from exc
    write_tensors(args.out, model_tensors(model))
    if args.metrics:
        atomic_write(args.metrics, "".join(line + "\n" for line in lines))
    if args.figure:
        from .report import training_figure

        training_figure(log, args.figure)
    return 0


def _result_rows(result):
    rows = [("accuracy", result.accuracy)]
    rows += [(f"accuracy_class_{c}", v) for c, v in sorted(result.per_class_accuracy.items())]
    if result.miou_instance is not None:
        rows += [("miou_instance", result.miou_instance), ("miou_category", result.miou_category)]
    return rows


def cmd_eval(args) -> int:
    model = _load_model(args.ckpt)
    task = "cls" if model.config.head == "classification" else "seg"
    if args.task and args.task != task:
        raise CliError(EXIT_MISMATCH, f"checkpoint holds a {model.config.head} model")
    exp = _experiment(args, task)
    exp = replace(exp, model=model.config)
    result = run_evaluation(model, exp, args.rotate)
    lines = ["metric\tvalue"] + [f"{k}\t{_fmt(v)}" for k, v in _result_rows(result)]
    _emit(lines, args.metrics)
    if args.figure:
        from .report import evaluation_figure

        evaluation_figure(result, args.rotate, args.figure)
    return 0


def cmd_ablate(args) -> int:
    exp = _experiment(args)
    try:
        rows = run_ablation(exp, args.axis, args.rotate)
    except TrainingDiverged as exc:
        raise CliError(EXIT_DIVERGED, str(exc)) from exc
    lines = [f"{args.axis}\taccuracy\tmiou_instance\tmiou_category"]
    for value, r in rows:
        label = ("on" if value else "off") if args.axis == "daas" else str(value)
        miou = (f"{_fmt(r.miou_instance)}\t{_fmt(r.miou_category)}" if r.miou_instance is not None else "nan\tnan")
        lines.append(f"{label}\t{_fmt(r.accuracy)}\t{miou}")
    _emit(lines, args.metrics)
    if args.figure:
        from .report import ablation_figure

        named = [(("on" if v else "off") if args.axis == "daas" else v, r) for v, r in rows]
        ablation_figure(args.axis, named, args.figure)
    return 0


# ---------------------------------------------------------------------------
# synthetic data and matching


def cmd_gen_data(args) -> int:
    try:
        params = DatasetParams(per_class=args.per_class, n_points=args.points, noise=args.noise)
    except ValueError as exc:
        raise CliError(EXIT_PARAMS, str(exc)) from exc
    ds = gen_synthetic_dataset(params, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["file\tclass\tfamily"]
    counters = {}
    for cloud, cls in zip(ds.clouds, ds.classes):
        family = FAMILIES[int(cls)]
        idx = counters.get(family, 0)
        counters[family] = idx + 1
        name = f"{family}_{idx:03d}.xyz"
        write_xyz(out / name, cloud)
        lines.append(f"{name}\t{int(cls)}\t{family}")
    atomic_write(out / "index.tsv", "".join(line + "\n" for line in lines))
    return 0


def _db_sidecar(db: DescriptorDB, names) -> str:
    lines = ["row\tobject_id\tobject\tpoint_id\tpart"]
    for row, (oid, pid, part) in enumerate(db.records()):
        lines.append(f"{row}\t{oid}\t{names[oid]}\t{pid}\t{part}")
    return "".join(line + "\n" for line in lines)


def cmd_match(args) -> int:
    model = _load_model(args.ckpt)
    if model.config.head != "segmentation":
        raise CliError(EXIT_MISMATCH, "matching needs a segmentation checkpoint")
    if args.k < 1:
        raise CliError(EXIT_PARAMS, "--k must be >= 1")
    db_clouds = []
    for path in args.db_objects:
        cloud = _read_cloud(path)
        if cloud.labels is None:
            raise CliError(EXIT_PARSE, f"{path}: database objects need a label column")
        db_clouds.append(normalize_cloud(cloud))
    query = _read_cloud(args.query)
    if query.labels is None:
        raise CliError(EXIT_PARSE, f"{args.query}: query needs a label column")
    query = normalize_cloud(query)
    db = build_descriptor_db(model, db_clouds)
    if len(db) == 0:
        raise CliError(EXIT_PARAMS, "descriptor database is empty")
    if args.k > len(db):
        raise CliError(EXIT_PARAMS, f"--k {args.k} exceeds the database size {len(db)}")
    rng = make_rng(args.seed)
    if args.rotate == "haar":
        R = geometry.haar_random_rotation(rng)
    elif args.rotate == "grid":
        B = model.config.bandwidth
        R = rot_z(2 * np.pi * int(rng.integers(1, 2 * B)) / (2 * B))
    else:
        R = None
    corr = match_points(query, R, model, db, args.k)
    names = [Path(p).name for p in args.db_objects]
    print(f"accuracy\t{_fmt(matching_accuracy(corr))}")
    print(f"matches\t{corr.db_parts.size}")
    if args.table:
        lines = ["query_point\trank\tdb_object\tdb_point\tdistance\tquery_part\tdb_part"]
        for q in range(corr.db_index.shape[0]):
            for r in range(corr.db_index.shape[1]):
                lines.append(f"{q}\t{r}\t{names[corr.db_objects[q, r]]}\t{corr.db_points[q, r]}\t"
                             f"{corr.distances[q, r]:.6e}\t{corr.query_parts[q]}\t{corr.db_parts[q, r]}")
        atomic_write(args.table, "".join(line + "\n" for line in lines))
    if args.db_out:
        write_tensors(args.db_out, {"descriptors": db.descriptors})
        atomic_write(str(args.db_out) + ".tsv", _db_sidecar(db, names))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphvox", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def grid_args(sp):
        sp.add_argument("--bandwidth", type=int)
        sp.add_argument("--h-res", type=int)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--no-daas", action="store_true")

    sp = sub.add_parser("featurize", help="DAAS grid or per-point model features of one cloud")
    sp.add_argument("--input", required=True)
    grid_args(sp)
    sp.add_argument("--model")
    sp.add_argument("--normalize", action="store_true", help="center and scale into the unit ball first")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("verify-invariance", help="feature deviation under rotations")
    sp.add_argument("--input", required=True)
    grid_args(sp)
    sp.add_argument("--model")
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--grid-exact", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify_invariance)

    def exp_args(sp, task_required=True):
        sp.add_argument("--task", choices=("cls", "seg"), required=task_required)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--metrics")
        sp.add_argument("--figure", help="also render a PNG figure to this path")

    sp = sub.add_parser("train", help="train a toy model on canonically posed synthetic shapes")
    exp_args(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a synthetic test set")
    exp_args(sp, task_required=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--rotate", choices=("none", "haar"), default="none")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="sweep one design axis")
    exp_args(sp)
    sp.set_defaults(task="seg")
    sp.add_argument("--axis", choices=sorted(ABLATION_AXES), required=True)
    sp.add_argument("--rotate", choices=("none", "haar"), default="haar")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("match", help="retrieve query points in a descriptor database")
    sp.add_argument("--db-objects", nargs="+", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--rotate", choices=("none", "grid", "haar"), default="haar")
    sp.add_argument("--table")
    sp.add_argument("--db-out")
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("gen-data", help="write synthetic labelled shapes as XYZ files")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--per-class", type=int, default=2)
    sp.add_argument("--points", type=int, default=512)
    sp.add_argument("--noise", type=float, default=0.005)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"sphvox: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, TypeError) as exc:
        print(f"sphvox: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except OSError as exc:
        print(f"sphvox: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
