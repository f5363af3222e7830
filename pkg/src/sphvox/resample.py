"""Trilinear re-sampling of voxel features at point locations, and its adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, PointCloud, cart_to_sph_array
from .sphgrid import NORM_TOL, GridSpec, SphericalVoxelGrid


@dataclass(frozen=True)
class Stencil:
    """Eight flat voxel indices and weights per point, both ``(N, 8)``."""

    index: np.ndarray
    weight: np.ndarray


def _axis(u, n, periodic):
    if periodic:
        i0 = np.floor(u).astype(np.int64)
        t = u - i0
        return np.mod(i0, n), np.mod(i0 + 1, n), t
    u = np.clip(u, 0.0, n - 1)
    if n == 1:
        z = np.zeros(u.shape, dtype=np.int64)
        return z, z, np.zeros(u.shape)
    i0 = np.minimum(np.floor(u).astype(np.int64), n - 2)
    return i0, i0 + 1, u - i0


def stencil_from_sph(spec: GridSpec, alpha, beta, h) -> Stencil:
    n, K = 2 * spec.bandwidth, spec.h_res
    a0, a1, ta = _axis(np.asarray(alpha) / (TWO_PI / n), n, periodic=True)
    b0, b1, tb = _axis(np.asarray(beta) / (np.pi / n) - 0.5, n, periodic=False)
    k0, k1, th = _axis(np.asarray(h) * K - 0.5, K, periodic=False)
    idx, wts = [], []
    for ia, wa in ((a0, 1.0 - ta), (a1, ta)):
        for ib, wb in ((b0, 1.0 - tb), (b1, tb)):
            for ik, wk in ((k0, 1.0 - th), (k1, th)):
                idx.append((ia * n + ib) * K + ik)
                wts.append(wa * wb * wk)
    return Stencil(np.stack(idx, axis=-1), np.stack(wts, axis=-1))


def stencil(spec: GridSpec, cloud: PointCloud) -> Stencil:
    norms = np.sqrt((cloud.points**2).sum(axis=1))
    if norms.max() > 1.0 + NORM_TOL:
        raise ValueError("cloud is not normalized")
    return stencil_from_sph(spec, *cart_to_sph_array(cloud.points))


def sample_array(data: np.ndarray, st: Stencil) -> np.ndarray:
    """``(C, 2B, 2B, K)`` data to ``(N, C)`` features."""
    flat = data.reshape(data.shape[0], -1)
    return np.einsum("cnp,np->nc", flat[:, st.index], st.weight)


def scatter_array(grid_shape, st: Stencil, upstream: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`sample_array`; accumulation order is fixed."""
    C = grid_shape[0]
    size = int(np.prod(grid_shape[1:]))
    upstream = np.asarray(upstream, dtype=np.float64)
    idx = st.index.reshape(-1)
    out = np.empty((C, size))
    for c in range(C):
        contrib = (st.weight * upstream[:, c : c + 1]).reshape(-1)
        out[c] = np.bincount(idx, weights=contrib, minlength=size)
    return out.reshape(grid_shape)


def trilinear_sample(grid: SphericalVoxelGrid, cloud: PointCloud) -> np.ndarray:
    """Feature matrix ``(N, C)`` interpolated from the eight surrounding voxels.

    alpha wraps around; beta and h are clamped to the outermost centres.
    """
    return sample_array(grid.data, stencil(grid.spec, cloud))


def trilinear_backward(grid_shape, cloud: PointCloud, upstream_grad: np.ndarray,
                       spec: GridSpec | None = None) -> np.ndarray:
    grid_shape = tuple(grid_shape)
    if len(grid_shape) != 4:
        raise ValueError("grid_shape must be (C, 2B, 2B, K)")
    if spec is None:
        spec = GridSpec(grid_shape[1] // 2, grid_shape[3])
    if np.shape(upstream_grad) != (len(cloud), grid_shape[0]):
        raise ValueError("upstream gradient must have shape (N, C)")
    return scatter_array(grid_shape, stencil(spec, cloud), upstream_grad)
