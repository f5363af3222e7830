"""Synthetic part-labelled shapes standing in for CAD benchmarks.

Four families in a canonical pose, each with part labels that are intrinsic
to the geometry (so a rotation-invariant model can recover them):

====== ========= ===========================================
class  family    parts (global part ids)
====== ========= ===========================================
0      cylinder  0 caps, 1 side
1      box       2 x-faces, 3 y-faces, 4 z-faces (unequal edges)
2      cone      5 lateral surface (apex region), 6 base disk
3      torus     7 inner half of the tube, 8 outer half
====== ========= ===========================================

Points are spread over the parts in proportion to their surface areas
(largest-remainder rounding) and uniformly within each part.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..geometry import PointCloud, make_rng, normalize_cloud

FAMILIES = ("cylinder", "box", "cone", "torus")
CATEGORY_PARTS = {0: (0, 1), 1: (2, 3, 4), 2: (5, 6), 3: (7, 8)}
NUM_PARTS = 9


@dataclass(frozen=True)
class DatasetParams:
    families: tuple = FAMILIES
    per_class: int = 8
    n_points: int = 512
    noise: float = 0.005

    def __post_init__(self):
        if not 0.0 <= self.noise <= 0.01:
            raise ValueError("noise sigma must lie in [0, 0.01]")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown shape families: {sorted(unknown)}")
        if self.per_class < 1 or self.n_points < 8:
            raise ValueError("per_class >= 1 and n_points >= 8 required")


@dataclass
class SyntheticDataset:
    clouds: list
    classes: np.ndarray
    params: DatasetParams
    seed: int
    shape_params: list = field(default_factory=list)

    def __len__(self):
        return len(self.clouds)

    def to_bytes(self) -> bytes:
        chunks = [self.classes.astype("<i8").tobytes()]
        for c in self.clouds:
            chunks.append(c.points.astype("<f8").tobytes())
            chunks.append(c.labels.astype("<i8").tobytes())
        return b"".join(chunks)


def _allocate(n: int, areas) -> np.ndarray:
    areas = np.asarray(areas, dtype=np.float64)
    exact = n * areas / areas.sum()
    counts = np.floor(exact).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _disk(rng, m, radius, z, inner=0.0):
    r = np.sqrt(rng.uniform(inner**2, radius**2, m))
    t = rng.uniform(0.0, 2 * np.pi, m)
    return np.stack([r * np.cos(t), r * np.sin(t), np.full(m, z)], axis=1)


def cylinder(rng, n, radius, height):
    cap_area = np.pi * radius**2
    side_area = 2 * np.pi * radius * height
    n_caps, n_side = _allocate(n, [2 * cap_area, side_area])
    top = rng.uniform(size=n_caps) < 0.5
    caps = _disk(rng, n_caps, radius, 0.0)
    caps[:, 2] = np.where(top, height / 2, -height / 2)
    t = rng.uniform(0.0, 2 * np.pi, n_side)
    side = np.stack([radius * np.cos(t), radius * np.sin(t), rng.uniform(-height / 2, height / 2, n_side)], axis=1)
    pts = np.concatenate([caps, side])
    labels = np.concatenate([np.zeros(n_caps, int), np.ones(n_side, int)])
    return pts, labels, {"caps": 2 * cap_area, "side": side_area}


def box(rng, n, a, b, c):
    areas = [2 * b * c, 2 * a * c, 2 * a * b]
    counts = _allocate(n, areas)
    half = np.array([a, b, c]) / 2
    pts, labels = [], []
    for axis, m in enumerate(counts):
        p = rng.uniform(-1.0, 1.0, (m, 3)) * half
        p[:, axis] = np.where(rng.uniform(size=m) < 0.5, half[axis], -half[axis])
        pts.append(p)
        labels.append(np.full(m, 2 + axis))
    return np.concatenate(pts), np.concatenate(labels), dict(zip(("x", "y", "z"), areas))


def cone(rng, n, radius, height):
    slant = np.hypot(radius, height)
    lateral = np.pi * radius * slant
    base = np.pi * radius**2
    n_lat, n_base = _allocate(n, [lateral, base])
    # lateral area element grows linearly with the distance from the apex
    s = np.sqrt(rng.uniform(0.0, 1.0, n_lat))
    t = rng.uniform(0.0, 2 * np.pi, n_lat)
    lat = np.stack([s * radius * np.cos(t), s * radius * np.sin(t), height / 2 - s * height], axis=1)
    bottom = _disk(rng, n_base, radius, -height / 2)
    pts = np.concatenate([lat, bottom])
    labels = np.concatenate([np.full(n_lat, 5), np.full(n_base, 6)])
    return pts, labels, {"lateral": lateral, "base": base}


def _tube_angles(rng, m, R, r, outer):
    out = np.empty(0)
    while out.size < m:
        phi = rng.uniform(-np.pi / 2, np.pi / 2, 2 * m)
        if not outer:
            phi = phi + np.pi
        accept = rng.uniform(0.0, R + r, 2 * m) < R + r * np.cos(phi)
        out = np.concatenate([out, phi[accept]])
    return out[:m]


def torus(rng, n, R, r):
    inner_area = 2 * np.pi * r * (np.pi * R - 2 * r)
    outer_area = 2 * np.pi * r * (np.pi * R + 2 * r)
    counts = _allocate(n, [inner_area, outer_area])
    pts, labels = [], []
    for outer, m in zip((False, True), counts):
        phi = _tube_angles(rng, m, R, r, outer)
        theta = rng.uniform(0.0, 2 * np.pi, m)
        rho = R + r * np.cos(phi)
        pts.append(np.stack([rho * np.cos(theta), rho * np.sin(theta), r * np.sin(phi)], axis=1))
        labels.append(np.full(m, 8 if outer else 7))
    return np.concatenate(pts), np.concatenate(labels), {"inner": inner_area, "outer": outer_area}


def make_shape(family: str, rng, n: int):
    if family == "cylinder":
        return cylinder(rng, n, rng.uniform(0.35, 0.5), rng.uniform(1.2, 1.6))
    if family == "box":
        return box(rng, n, rng.uniform(1.0, 1.2), rng.uniform(0.6, 0.75), rng.uniform(0.3, 0.4))
    if family == "cone":
        return cone(rng, n, rng.uniform(0.5, 0.7), rng.uniform(1.0, 1.4))
    if family == "torus":
        return torus(rng, n, rng.uniform(0.6, 0.7), rng.uniform(0.2, 0.28))
    raise ValueError(f"unknown family {family!r}")


def gen_synthetic_dataset(params: DatasetParams, seed: int) -> SyntheticDataset:
    """Deterministic, class-balanced set of normalized, canonically posed shapes."""
    rng = make_rng(seed)
    clouds, classes, info = [], [], []
    for _ in range(params.per_class):
        for family in params.families:
            pts, labels, areas = make_shape(family, rng, params.n_points)
            if params.noise > 0:
                pts = pts + rng.normal(0.0, params.noise, pts.shape)
            clouds.append(normalize_cloud(PointCloud(pts, labels)))
            classes.append(FAMILIES.index(family))
            info.append(areas)
    return SyntheticDataset(clouds, np.asarray(classes), params, seed, info)


def params_to_dict(params: DatasetParams) -> dict:
    d = asdict(params)
    d["families"] = list(d["families"])
    return d
