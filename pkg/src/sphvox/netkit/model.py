"""Layer stacks for the classification and segmentation heads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import resample
from ..geometry import PointCloud, make_rng
from ..harmonics import quadrature_weights
from ..io import tensor_text, text_tensor
from ..sphgrid import GridSpec, build_signal
from ..svc import lift_array, ring_mask
from . import tape as T

HEADS = ("classification", "segmentation")


@dataclass(frozen=True)
class ModelConfig:
    """Layer stack description.

    ``bandlimits`` holds one spectral cut-off per SVC layer (``None`` keeps the
    full bandwidth); cut-offs may only decrease along the stack.
    """

    head: str = "classification"
    bandwidth: int = 8
    h_res: int = 16
    delta: float = 0.2
    daas: bool = True
    channels: tuple = (8, 8)
    bandlimits: tuple | None = None
    fc: tuple = (32,)
    activation: str = "relu"
    num_classes: int = 4
    num_parts: int = 9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "fc", tuple(int(c) for c in self.fc))
        if self.bandlimits is None:
            object.__setattr__(self, "bandlimits", (self.bandwidth,) * len(self.channels))
        object.__setattr__(self, "bandlimits", tuple(int(b) for b in self.bandlimits))
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.activation != "relu":
            raise ValueError("only the 'relu' activation is available")
        if not self.channels or min(self.channels) < 1 or min(self.fc, default=1) < 1:
            raise ValueError("layer widths must be positive")
        if len(self.bandlimits) != len(self.channels):
            raise ValueError("one bandlimit per SVC layer required")
        bl = np.asarray(self.bandlimits)
        if bl.min() < 1 or bl.max() > self.bandwidth or np.any(np.diff(bl) > 0):
            raise ValueError("bandlimits must be non-increasing and within [1, bandwidth]")
        self.grid_spec  # validates bandwidth, h_res, delta

    @property
    def grid_spec(self) -> GridSpec:
        """Grid of the DAAS input signal."""
        return GridSpec(self.bandwidth, self.h_res, self.delta)

    @property
    def feature_spec(self) -> GridSpec:
        """Grid of every hidden layer: the full SO(3) sampling, ``K = 2B``."""
        return GridSpec(self.bandwidth, 2 * self.bandwidth, self.delta)

    @property
    def outputs(self) -> int:
        return self.num_classes if self.head == "classification" else self.num_parts

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        for key in ("channels", "fc", "bandlimits"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask = ring_mask(self.config.feature_spec)

    def param_names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        total = 0
        for name, p in self.params.items():
            total += int(self.mask.sum()) * p.shape[0] * p.shape[1] if name.endswith("kernel") else p.size
        return total

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})


def kernel_init_scale(spec: GridSpec, c_in: int) -> float:
    """He-style scale for ring filters under the normalized Haar quadrature."""
    n = 2 * spec.bandwidth
    mu = quadrature_weights(spec.bandwidth) / (2.0 * n * n)
    mask = ring_mask(spec)
    ring_mu = np.broadcast_to(mu[None, :, None], spec.shape)[mask]
    return float(np.sqrt(2.0 / (c_in * np.sum(ring_mu**2))))


def init_model(config: ModelConfig) -> Model:
    rng = make_rng(config.seed)
    spec = config.feature_spec
    model = Model(config)
    c_in = 1
    for i, c_out in enumerate(config.channels):
        w = kernel_init_scale(spec, c_in) * rng.standard_normal((c_out, c_in) + spec.shape)
        model.params[f"svc{i}.kernel"] = np.where(model.mask, w, 0.0)
        c_in = c_out
    widths = (c_in,) + config.fc + (config.outputs,)
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        model.params[f"fc{i}.weight"] = rng.standard_normal((a, b)) * np.sqrt(2.0 / a)
        model.params[f"fc{i}.bias"] = np.zeros(b)
    return model


def zero_model(config: ModelConfig) -> Model:
    model = init_model(config)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    return model


def input_signal(config: ModelConfig, cloud: PointCloud) -> np.ndarray:
    """``(1, 2B, 2B, 2B)`` model input.

    The DAAS grid is rescaled to ``[0, 1]`` and lifted once onto the SO(3)
    sampling, so hidden layers never re-interpolate along ``h``.
    """
    grid = build_signal(cloud, config.grid_spec, config.daas)
    return lift_array(grid.data / config.delta)


def _check_head(model: Model, head: str):
    if model.config.head != head:
        raise ValueError(f"model has a {model.config.head} head, not {head}")


def param_vars(model: Model, trainable: bool = True) -> dict[str, T.Var]:
    return {k: T.Var(v, k, trainable) for k, v in model.params.items()}


def svc_stack(tape: T.Tape, model: Model, x: T.Var, pv: dict) -> T.Var:
    cfg = model.config
    for i, bl in enumerate(cfg.bandlimits):
        x = T.relu(tape, T.svc(tape, x, pv[f"svc{i}.kernel"], model.mask, bl))
    return x


def fc_stack(tape: T.Tape, model: Model, x: T.Var, pv: dict, stop_before_last: bool = False) -> T.Var:
    n_fc = len(model.config.fc) + 1
    for i in range(n_fc):
        if stop_before_last and i == n_fc - 1:
            break
        x = T.linear(tape, x, pv[f"fc{i}.weight"], pv[f"fc{i}.bias"])
        if i < n_fc - 1:
            x = T.relu(tape, x)
    return x


def forward_batch(tape: T.Tape, model: Model, clouds, pv: dict, penultimate: bool = False) -> T.Var:
    """Logits for a list of clouds: ``(batch, classes)`` or ``(batch, N, parts)``."""
    cfg = model.config
    x = T.Var(np.stack([input_signal(cfg, c) for c in clouds]))
    feats = svc_stack(tape, model, x, pv)
    if cfg.head == "classification":
        feats = T.global_maxpool(tape, feats)
    else:
        sizes = {len(c) for c in clouds}
        if len(sizes) != 1:
            raise ValueError("a segmentation batch needs equal point counts")
        stencils = [resample.stencil(cfg.feature_spec, c) for c in clouds]
        feats = T.trilinear(tape, feats, stencils)
    return fc_stack(tape, model, feats, pv, stop_before_last=penultimate)


def forward_classification(model: Model, cloud: PointCloud) -> np.ndarray:
    """Class logits of one cloud."""
    _check_head(model, "classification")
    tape = T.Tape()
    return forward_batch(tape, model, [cloud], param_vars(model, False)).value[0]


def forward_segmentation(model: Model, cloud: PointCloud) -> np.ndarray:
    """``(N, parts)`` per-point logits."""
    _check_head(model, "segmentation")
    tape = T.Tape()
    return forward_batch(tape, model, [cloud], param_vars(model, False)).value[0]


def global_feature(model: Model, cloud: PointCloud) -> np.ndarray:
    """Channel-wise max of the last SVC layer over every voxel site."""
    tape = T.Tape()
    x = T.Var(input_signal(model.config, cloud)[None])
    feats = svc_stack(tape, model, x, param_vars(model, False))
    return T.global_maxpool(tape, feats).value[0]


def point_features(model: Model, cloud: PointCloud) -> np.ndarray:
    """``(N, C)`` last-layer SVC features re-sampled at the points."""
    tape = T.Tape()
    x = T.Var(input_signal(model.config, cloud)[None])
    feats = svc_stack(tape, model, x, param_vars(model, False))
    return T.trilinear(tape, feats, [resample.stencil(model.config.feature_spec, cloud)]).value[0]


def descriptor(model: Model, cloud: PointCloud) -> np.ndarray:
    """L2-normalized per-point input of the final segmentation layer."""
    _check_head(model, "segmentation")
    tape = T.Tape()
    feats = forward_batch(tape, model, [cloud], param_vars(model, False), penultimate=True).value[0]
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.where(norms > 0.0, norms, 1.0)


def loss_and_grads(model: Model, clouds, targets) -> tuple[float, dict, np.ndarray]:
    """Mean cross-entropy over a batch, its parameter gradients, and the logits."""
    tape = T.Tape()
    pv = param_vars(model)
    logits = forward_batch(tape, model, clouds, pv)
    loss = T.cross_entropy(tape, logits, np.asarray(targets))
    grads = tape.backward(loss, list(pv.values()))
    return float(loss.value), grads, logits.value


CONFIG_TENSOR = "__config__"


def model_tensors(model: Model) -> dict[str, np.ndarray]:
    """Checkpoint payload: the JSON config followed by every parameter."""
    out = {CONFIG_TENSOR: text_tensor(model.config.to_json())}
    out.update(model.params)
    return out


def model_from_tensors(tensors: dict) -> Model:
    if CONFIG_TENSOR not in tensors:
        raise ValueError("checkpoint has no config header")
    config = ModelConfig.from_json(tensor_text(tensors[CONFIG_TENSOR]))
    reference = init_model(config)
    params = {}
    for name, ref in reference.params.items():
        if name not in tensors or tuple(tensors[name].shape) != ref.shape:
            raise ValueError(f"checkpoint tensor {name!r} missing or misshapen")
        params[name] = np.asarray(tensors[name], dtype=np.float64)
    extra = set(tensors) - set(params) - {CONFIG_TENSOR}
    if extra:
        raise ValueError(f"unexpected checkpoint tensors: {sorted(extra)}")
    model = Model(config, params)
    for name in params:
        if name.endswith(".kernel"):
            params[name] = np.where(model.mask, params[name], 0.0)
    return model
