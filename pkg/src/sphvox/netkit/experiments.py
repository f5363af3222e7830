"""Toy experiment presets: train without rotations, test with or without them."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace

from .data import DatasetParams, SyntheticDataset, gen_synthetic_dataset, params_to_dict
from .model import Model, ModelConfig, init_model
from .train import EvalResult, OptimizerParams, evaluate, train

TASKS = {"cls": "classification", "seg": "segmentation"}


@dataclass(frozen=True)
class Experiment:
    model: ModelConfig
    data: DatasetParams
    optimizer: OptimizerParams
    epochs: int
    test_per_class: int
    seed: int = 0

    @property
    def train_seed(self) -> int:
        return 2 * self.seed

    @property
    def test_seed(self) -> int:
        return 2 * self.seed + 1

    def with_seed(self, seed: int) -> "Experiment":
        return replace(self, seed=seed, model=replace(self.model, seed=seed),
                       optimizer=replace(self.optimizer, seed=seed))

    def to_dict(self) -> dict:
        return {
            "model": json.loads(self.model.to_json()),
            "data": params_to_dict(self.data),
            "optimizer": dataclasses.asdict(self.optimizer),
            "epochs": self.epochs,
            "test_per_class": self.test_per_class,
            "seed": self.seed,
        }


# Classifier: a single SVC layer on a radially collapsed input (h_res 1),
# truncated to degrees < 4, with the plain (non-DAAS) window.
CLASSIFICATION = Experiment(
    model=ModelConfig(head="classification", bandwidth=8, h_res=1, delta=0.5, daas=False,
                      channels=(16,), bandlimits=(4,), fc=(32,)),
    data=DatasetParams(per_class=30),
    optimizer=OptimizerParams(lr=0.01, decay=0.5, decay_every=10, batch_size=4),
    epochs=25,
    test_per_class=25,
)

# Segmenter: one SVC layer on the DAAS input with 8 radial layers.
SEGMENTATION = Experiment(
    model=ModelConfig(head="segmentation", bandwidth=8, h_res=8, delta=0.25, daas=True,
                      channels=(16,), bandlimits=(8,), fc=(32,)),
    data=DatasetParams(per_class=8),
    optimizer=OptimizerParams(lr=0.01, decay=0.5, decay_every=10, batch_size=4),
    epochs=20,
    test_per_class=8,
)

PRESETS = {"cls": CLASSIFICATION, "seg": SEGMENTATION}


def _merge(obj, overrides: dict, name: str):
    fields = {f.name for f in dataclasses.fields(obj)}
    unknown = set(overrides) - fields
    if unknown:
        raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(obj, **values)


def experiment_from_dict(task: str, overrides: dict | None = None, seed: int | None = None) -> Experiment:
    """Preset for ``task`` with nested overrides (``model``, ``data``, ``optimizer``, scalars)."""
    if task not in PRESETS:
        raise ValueError(f"task must be one of {sorted(PRESETS)}")
    exp = PRESETS[task]
    overrides = dict(overrides or {})
    known = {"model", "data", "optimizer", "epochs", "test_per_class", "seed"}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    model_over = dict(overrides.get("model", {}))
    if "channels" in model_over and "bandlimits" not in model_over:
        model_over["bandlimits"] = None  # preset cut-offs belong to the preset stack
    model = _merge(exp.model, model_over, "model")
    if model.head != TASKS[task]:
        raise ValueError(f"task {task} needs a {TASKS[task]} head")
    exp = replace(
        exp,
        model=model,
        data=_merge(exp.data, overrides.get("data", {}), "data"),
        optimizer=_merge(exp.optimizer, overrides.get("optimizer", {}), "optimizer"),
        epochs=int(overrides.get("epochs", exp.epochs)),
        test_per_class=int(overrides.get("test_per_class", exp.test_per_class)),
    )
    if exp.epochs < 0 or exp.test_per_class < 1:
        raise ValueError("epochs >= 0 and test_per_class >= 1 required")
    return exp.with_seed(int(overrides.get("seed", 0) if seed is None else seed))


def train_dataset(exp: Experiment) -> SyntheticDataset:
    return gen_synthetic_dataset(exp.data, exp.train_seed)


def test_dataset(exp: Experiment) -> SyntheticDataset:
    return gen_synthetic_dataset(replace(exp.data, per_class=exp.test_per_class), exp.test_seed)


def run_training(exp: Experiment, callback=None):
    return train(init_model(exp.model), train_dataset(exp), exp.epochs, exp.optimizer, callback)


def run_evaluation(model: Model, exp: Experiment, rotation_mode: str) -> EvalResult:
    return evaluate(model, test_dataset(exp), rotation_mode, seed=exp.test_seed)


ABLATION_AXES = {
    "bandwidth": (4, 8),
    "h-res": (1, 8),
    "daas": (True, False),
}


def ablation_config(exp: Experiment, axis: str, value) -> Experiment:
    m = exp.model
    if axis == "bandwidth":
        bl = tuple(min(b, value) for b in m.bandlimits)
        m = replace(m, bandwidth=value, bandlimits=bl)
    elif axis == "h-res":
        m = replace(m, h_res=value)
    elif axis == "daas":
        m = replace(m, daas=value)
    else:
        raise ValueError(f"axis must be one of {sorted(ABLATION_AXES)}")
    return replace(exp, model=m)


def run_ablation(exp: Experiment, axis: str, rotation_mode: str = "haar", values=None):
    """One ``(value, EvalResult)`` row per setting of ``axis``."""
    rows = []
    for value in values or ABLATION_AXES[axis]:
        cfg = ablation_config(exp, axis, value)
        model, _ = run_training(cfg)
        rows.append((value, run_evaluation(model, cfg, rotation_mode)))
    return rows
