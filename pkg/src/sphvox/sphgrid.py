"""Density aware adaptive sampling of point clouds onto spherical voxels.

A voxel ``(i, j, k)`` is centred at ``(a_i, b_j, c_k)`` and its value is the
window-average of ``delta - |h_n - c_k|`` over the points whose coordinates
fall within the indicator windows around the centre. The polar window is
scaled by ``sin(b_j)`` when density awareness is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, PointCloud, cart_to_sph_array

NORM_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    bandwidth: int = 32
    h_res: int = 64
    delta: float = 1.0 / 32.0

    def __post_init__(self):
        if int(self.bandwidth) != self.bandwidth or self.bandwidth < 2:
            raise ValueError("bandwidth must be an integer >= 2")
        if int(self.h_res) != self.h_res or self.h_res < 1:
            raise ValueError("h_res must be an integer >= 1")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")

    @property
    def shape(self) -> tuple[int, int, int]:
        n = 2 * self.bandwidth
        return n, n, self.h_res


@dataclass(frozen=True)
class SphericalVoxelGrid:
    """Multichannel signal of shape ``C x 2B x 2B x K`` over ``(alpha, beta, h)``."""

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[1:] != self.spec.shape:
            raise ValueError(f"grid data shape {data.shape} does not match {self.spec.shape}")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def voxel_centers(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = 2 * spec.bandwidth
    a = TWO_PI * np.arange(n) / n
    b = np.pi * (2 * np.arange(n) + 1) / (2 * n)
    c = (np.arange(spec.h_res) + 0.5) / spec.h_res
    return a, b, c


def density_factor(beta):
    """Polar density correction ``eta = sin(beta)``."""
    return np.sin(beta)


def _candidates(coord, lo_offset, spacing, half_width, n, periodic):
    """Indices of sample centres possibly within ``half_width`` of ``coord``.

    Centres sit at ``(idx + lo_offset) * spacing``. Returns ``(idx, valid)``
    arrays of shape ``(N, m)``; ``valid`` marks in-range, non-duplicate slots.
    """
    m = int(np.floor(2.0 * half_width / spacing)) + 2
    N = coord.shape[0]
    if m >= n:
        idx = np.broadcast_to(np.arange(n), (N, n))
        return idx, np.ones((N, n), dtype=bool)
    start = np.floor((coord - half_width) / spacing - lo_offset).astype(np.int64)
    idx = start[:, None] + np.arange(m)[None, :]
    if periodic:
        return np.mod(idx, n), np.ones(idx.shape, dtype=bool)
    valid = (idx >= 0) & (idx < n)
    return np.clip(idx, 0, n - 1), valid


def _check_normalized(cloud: PointCloud) -> None:
    norms = np.sqrt((cloud.points**2).sum(axis=1))
    if norms.max() > 1.0 + NORM_TOL:
        raise ValueError("cloud is not normalized: max norm %.6g > 1" % norms.max())


def _canonical_order(points: np.ndarray, h: np.ndarray) -> np.ndarray:
    # sort key (h, z, x, y): makes the accumulation order independent of the
    # input order and unchanged by quarter turns about Z
    return np.lexsort((points[:, 1], points[:, 0], points[:, 2], h))


def _window_sums(cloud: PointCloud, spec: GridSpec, daas_enabled: bool):
    n = 2 * spec.bandwidth
    K = spec.h_res
    delta = spec.delta
    a, b, c = voxel_centers(spec)
    alpha, beta, h = cart_to_sph_array(cloud.points)
    order = _canonical_order(cloud.points, h)
    alpha, beta, h = alpha[order], beta[order], h[order]

    d_alpha = TWO_PI / n
    d_beta = np.pi / n
    eta = density_factor(b) if daas_enabled else np.ones(n)

    ia, va = _candidates(alpha, 0.0, d_alpha, delta, n, periodic=True)
    da = np.abs(alpha[:, None] - a[ia])
    da = np.minimum(da, TWO_PI - da)
    va &= da < delta

    jb, vb = _candidates(beta, 0.5, d_beta, delta, n, periodic=False)
    vb &= np.abs(beta[:, None] - b[jb]) < eta[jb] * delta

    kh, vh = _candidates(h, 0.5, 1.0 / K, delta, K, periodic=False)
    dist_h = np.abs(h[:, None] - c[kh])
    vh &= dist_h < delta

    mask = va[:, :, None, None] & vb[:, None, :, None] & vh[:, None, None, :]
    flat = (ia[:, :, None, None] * n + jb[:, None, :, None]) * K + kh[:, None, None, :]
    contrib = np.broadcast_to((delta - dist_h)[:, None, None, :], mask.shape)
    sel = mask.reshape(-1)
    idx = flat.reshape(-1)[sel]
    size = n * n * K
    num = np.bincount(idx, weights=contrib.reshape(-1)[sel], minlength=size)
    den = np.bincount(idx, minlength=size).astype(np.float64)
    return num.reshape(n, n, K), den.reshape(n, n, K)


def window_counts(cloud: PointCloud, spec: GridSpec, daas_enabled: bool = True) -> np.ndarray:
    """Per-voxel ``sum_n w_n`` (number of points inside the windows)."""
    _check_normalized(cloud)
    return _window_sums(cloud, spec, daas_enabled)[1]


def build_signal(cloud: PointCloud, spec: GridSpec, daas_enabled: bool = True) -> SphericalVoxelGrid:
    """Single-channel spherical voxel signal of a normalized cloud.

    Voxels whose windows contain no point are set to 0.
    """
    _check_normalized(cloud)
    num, den = _window_sums(cloud, spec, daas_enabled)
    f = np.zeros_like(num)
    hit = den > 0
    f[hit] = num[hit] / den[hit]
    return SphericalVoxelGrid(spec, f[None])


def signal_statistics(grid: SphericalVoxelGrid, k_slice=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance over ``(i, k)`` for every polar ring ``j``.

    ``k_slice`` optionally restricts the radial layers taken into account.
    """
    if grid.channels != 1:
        raise ValueError("signal_statistics expects a single-channel grid")
    data = grid.data[0]
    if k_slice is not None:
        data = data[:, :, k_slice]
    ring = np.moveaxis(data, 1, 0).reshape(data.shape[1], -1)
    return ring.mean(axis=1), ring.var(axis=1)


def coefficient_of_variation(values: np.ndarray) -> float:
    m = float(np.mean(values))
    return float(np.std(values) / m) if m != 0.0 else float("inf")
