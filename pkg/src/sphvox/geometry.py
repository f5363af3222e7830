"""Coordinates, ZYZ rotations, Haar sampling and point-cloud normalization.

Conventions used everywhere in the package:

* spherical coordinates ``(alpha, beta, h)``: azimuth in ``[0, 2*pi)``, polar
  angle in ``[0, pi]`` measured from +Z, radius in ``[0, 1]``;
* ``R(alpha, beta, gamma) = Z(alpha) @ Y(beta) @ Z(gamma)`` with active
  right-handed elementary rotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi
_GIMBAL_TOL = 1e-12


def make_rng(seed: int | None) -> np.random.Generator:
    """Seeded counter-based generator (Philox) used by every random API."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class SphCoord:
    alpha: float
    beta: float
    h: float


@dataclass(frozen=True)
class PointCloud:
    """``N x 3`` points with optional per-point integer labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise ValueError("labels must have one entry per point")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.labels)


def _trig(theta: float) -> tuple[float, float]:
    # exact zeros at quarter turns, so those rotations permute coordinates exactly
    c, s = float(np.cos(theta)), float(np.sin(theta))
    return (0.0 if abs(c) < 1e-15 else c), (0.0 if abs(s) < 1e-15 else s)


def rot_z(theta: float) -> np.ndarray:
    c, s = _trig(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(theta: float) -> np.ndarray:
    c, s = _trig(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _wrap(angle: float) -> float:
    a = float(np.mod(angle, TWO_PI))
    return 0.0 if a >= TWO_PI else a


@dataclass(frozen=True)
class RotationZYZ:
    """Rotation stored both as canonical ZYZ angles and as its 3x3 matrix."""

    alpha: float
    beta: float
    gamma: float
    matrix: np.ndarray = field(repr=False, compare=False)

    @property
    def T(self) -> np.ndarray:
        return self.matrix.T

    def inverse(self) -> "RotationZYZ":
        return rotation_from_matrix(self.matrix.T)

    def __matmul__(self, other):
        if isinstance(other, RotationZYZ):
            return rotation_from_matrix(self.matrix @ other.matrix)
        return self.matrix @ other


def rot_from_zyz(alpha: float, beta: float, gamma: float) -> RotationZYZ:
    """Build ``Z(alpha) Y(beta) Z(gamma)``; angles are normalized first.

    A polar angle outside ``[0, pi]`` is folded back using
    ``Y(-b) = Z(pi) Y(b) Z(pi)``, so the stored angles are canonical while the
    matrix is unchanged.
    """
    if not all(np.isfinite([alpha, beta, gamma])):
        raise ValueError("Euler angles must be finite")
    matrix = rot_z(alpha) @ rot_y(beta) @ rot_z(gamma)
    b = float(np.mod(beta, TWO_PI))
    a, g = float(alpha), float(gamma)
    if b > np.pi:
        b = TWO_PI - b
        a += np.pi
        g += np.pi
    matrix.setflags(write=False)
    return RotationZYZ(_wrap(a), b, _wrap(g), matrix)


def check_rotation(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return R


def zyz_from_rot(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rot_from_zyz`.

    In gimbal lock (``sin(beta) <= 1e-12``) gamma is set to 0 and alpha
    carries the whole rotation about Z.
    """
    R = check_rotation(R)
    sin_b = float(np.hypot(R[0, 2], R[1, 2]))
    if sin_b <= _GIMBAL_TOL:
        if R[2, 2] > 0:
            return _wrap(np.arctan2(R[1, 0], R[0, 0])), 0.0, 0.0
        return _wrap(np.arctan2(-R[1, 0], -R[0, 0])), float(np.pi), 0.0
    beta = float(np.arctan2(sin_b, R[2, 2]))
    alpha = np.arctan2(R[1, 2], R[0, 2])
    gamma = np.arctan2(R[2, 1], -R[2, 0])
    return _wrap(alpha), beta, _wrap(gamma)


def rotation_from_matrix(R: np.ndarray) -> RotationZYZ:
    R = check_rotation(R)
    a, b, g = zyz_from_rot(R)
    matrix = np.array(R, dtype=np.float64)
    matrix.setflags(write=False)
    return RotationZYZ(a, b, g, matrix)


def identity_rotation() -> RotationZYZ:
    return rot_from_zyz(0.0, 0.0, 0.0)


def haar_random_rotation(rng: np.random.Generator) -> RotationZYZ:
    """One rotation drawn from the normalized Haar measure of SO(3).

    alpha, gamma are uniform on ``[0, 2*pi)`` and ``beta = arccos(u)`` with
    ``u ~ U[-1, 1]``, which reproduces the ``sin(beta)/2`` polar density.
    """
    alpha, u, gamma = rng.uniform(0.0, 1.0, size=3)
    return rot_from_zyz(TWO_PI * alpha, float(np.arccos(2.0 * u - 1.0)), TWO_PI * gamma)


def haar_random_matrices(rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized variant returning an ``(n, 3, 3)`` stack of Haar rotations."""
    u = rng.uniform(0.0, 1.0, size=(n, 3))
    a = TWO_PI * u[:, 0]
    b = np.arccos(2.0 * u[:, 1] - 1.0)
    g = TWO_PI * u[:, 2]
    return zyz_matrices(a, b, g)


def zyz_matrices(alpha, beta, gamma) -> np.ndarray:
    """Stack of ``Z(alpha) Y(beta) Z(gamma)`` for broadcastable angle arrays."""
    alpha, beta, gamma = np.broadcast_arrays(
        np.asarray(alpha, float), np.asarray(beta, float), np.asarray(gamma, float)
    )
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    out = np.empty(alpha.shape + (3, 3))
    out[..., 0, 0] = ca * cb * cg - sa * sg
    out[..., 0, 1] = -ca * cb * sg - sa * cg
    out[..., 0, 2] = ca * sb
    out[..., 1, 0] = sa * cb * cg + ca * sg
    out[..., 1, 1] = -sa * cb * sg + ca * cg
    out[..., 1, 2] = sa * sb
    out[..., 2, 0] = -sb * cg
    out[..., 2, 1] = sb * sg
    out[..., 2, 2] = cb
    return out


def zyz_from_matrices(R: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`zyz_from_rot` without validation."""
    sin_b = np.hypot(R[..., 0, 2], R[..., 1, 2])
    beta = np.arctan2(sin_b, R[..., 2, 2])
    alpha = np.arctan2(R[..., 1, 2], R[..., 0, 2])
    gamma = np.arctan2(R[..., 2, 1], -R[..., 2, 0])
    lock = sin_b <= _GIMBAL_TOL
    north = lock & (R[..., 2, 2] > 0)
    south = lock & ~north
    alpha = np.where(north, np.arctan2(R[..., 1, 0], R[..., 0, 0]), alpha)
    alpha = np.where(south, np.arctan2(-R[..., 1, 0], -R[..., 0, 0]), alpha)
    beta = np.where(north, 0.0, np.where(south, np.pi, beta))
    gamma = np.where(north | south, 0.0, gamma)
    return np.mod(alpha, TWO_PI), beta, np.mod(gamma, TWO_PI)


def cart_to_sph_array(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized Cartesian to ``(alpha, beta, h)``; the origin maps to zeros."""
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.sqrt(x * x + y * y + z * z)
    alpha = np.mod(np.arctan2(y, x), TWO_PI)
    alpha = np.where(alpha >= TWO_PI, 0.0, alpha)
    safe = np.where(r > 0.0, r, 1.0)
    beta = np.where(r > 0.0, np.arccos(np.clip(z / safe, -1.0, 1.0)), 0.0)
    return alpha, beta, np.clip(r, 0.0, 1.0)


def cart_to_sph(p) -> SphCoord:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if np.linalg.norm(p) > 1.0 + 1e-9:
        raise ValueError("point lies outside the unit ball")
    a, b, h = cart_to_sph_array(p)
    return SphCoord(float(a), float(b), float(h))


def sph_to_cart(s: SphCoord) -> np.ndarray:
    sb = np.sin(s.beta)
    return s.h * np.array([sb * np.cos(s.alpha), sb * np.sin(s.alpha), np.cos(s.beta)])


def apply_rotation(R, cloud: PointCloud) -> PointCloud:
    """Rotate every point, ``p -> R p``; labels are carried along."""
    M = R.matrix if isinstance(R, RotationZYZ) else check_rotation(R)
    return cloud.with_points(cloud.points @ M.T)


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    A cloud whose points all coincide becomes all zeros.
    """
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    scale = np.sqrt((centered * centered).sum(axis=1)).max()
    if scale == 0.0:
        return cloud.with_points(np.zeros_like(pts))
    out = centered / scale
    # rescaling can leave the max norm a few ulp above 1
    norms = np.sqrt((out * out).sum(axis=1))
    over = norms > 1.0
    if np.any(over):
        out[over] /= norms[over, None]
    return cloud.with_points(out)
