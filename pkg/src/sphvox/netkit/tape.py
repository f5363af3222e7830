"""Minimal reverse-mode differentiation over numpy arrays.

Every primitive appends a record (inputs, output, adjoint closure) to a
:class:`Tape`; :meth:`Tape.backward` replays the records in reverse and
returns one gradient per trainable variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import resample
from ..svc import kernel_spectrum, svc_backward_array, svc_forward_array


class Var:
    __slots__ = ("value", "name", "requires_grad")

    def __init__(self, value, name: str | None = None, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.name or '?'}, shape={self.value.shape})"


@dataclass
class Record:
    name: str
    inputs: tuple
    output: Var
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    def __init__(self):
        self.records: list[Record] = []

    def push(self, name, inputs, value, backward) -> Var:
        out = Var(value, requires_grad=any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self.records.append(Record(name, tuple(inputs), out, backward))
        return out

    def backward(self, loss: Var, params: Sequence[Var]) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every variable in ``params``."""
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for v, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not v.requires_grad:
                    continue
                key = id(v)
                grads[key] = grads[key] + gi if key in grads else gi
        return {p.name: grads.get(id(p), np.zeros_like(p.value)) for p in params}


# ---------------------------------------------------------------------------
# primitives


def svc(tape: Tape, x: Var, w: Var, mask: np.ndarray, bandlimit: int | None = None) -> Var:
    """Batched spherical voxel convolution, ``x`` is ``(batch, C_in, 2B, 2B, K)``."""
    psi_hat = kernel_spectrum(w.value)
    y = svc_forward_array(x.value, w.value, bandlimit, psi_hat)

    def back(g):
        gx, gw = svc_backward_array(x.value, w.value, mask, g, bandlimit, psi_hat,
                                    need_input_grad=x.requires_grad)
        return gx, gw

    return tape.push("svc", (x, w), y, back)


def relu(tape: Tape, x: Var) -> Var:
    pos = x.value > 0.0
    return tape.push("relu", (x,), np.where(pos, x.value, 0.0), lambda g: (g * pos,))


def scale(tape: Tape, x: Var, factor: float) -> Var:
    return tape.push("scale", (x,), x.value * factor, lambda g: (g * factor,))


def linear(tape: Tape, x: Var, W: Var, b: Var) -> Var:
    """``x @ W + b`` over the last axis of ``x``."""
    y = x.value @ W.value + b.value

    def back(g):
        xf = x.value.reshape(-1, x.shape[-1])
        gf = g.reshape(-1, g.shape[-1])
        return g @ W.value.T, xf.T @ gf, gf.sum(axis=0)

    return tape.push("linear", (x, W, b), y, back)


def global_maxpool(tape: Tape, x: Var) -> Var:
    """Max over all voxel sites per channel: ``(batch, C, ...)`` to ``(batch, C)``."""
    flat = x.value.reshape(x.shape[0], x.shape[1], -1)
    arg = flat.argmax(axis=-1)  # first maximum on ties
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, arg[..., None], g[..., None], axis=-1)
        return (gx.reshape(x.shape),)

    return tape.push("maxpool", (x,), y, back)


def trilinear(tape: Tape, x: Var, stencils: Sequence[resample.Stencil]) -> Var:
    """Re-sample ``(batch, C, 2B, 2B, K)`` grids at per-sample stencils to ``(batch, N, C)``."""
    y = np.stack([resample.sample_array(x.value[b], st) for b, st in enumerate(stencils)])

    def back(g):
        shape = x.shape[1:]
        return (np.stack([resample.scatter_array(shape, st, g[b]) for b, st in enumerate(stencils)]),)

    return tape.push("trilinear", (x,), y, back)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(tape: Tape, logits: Var, labels: np.ndarray) -> Var:
    """Mean negative log-likelihood over every leading position of ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    lsm = log_softmax(logits.value)
    picked = np.take_along_axis(lsm, labels[..., None], axis=-1)[..., 0]
    count = picked.size
    loss = -picked.mean()

    def back(g):
        p = np.exp(lsm)
        np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p / count,)

    return tape.push("cross_entropy", (logits,), np.array(loss), back)
