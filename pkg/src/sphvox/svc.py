"""Spherical voxel convolution.

Signals on ``S^2 x H`` are lifted to SO(3) by reading the radial axis as the
third Euler angle, correlated with a filter through the SO(3) convolution
theorem and brought back by the inverse map. Integrals use the normalized Haar
measure, so a filter that is identically 1 returns the Haar mean of the input.

The radial index ``k`` (centre ``(k + 1/2)/K``) sits at fractional gamma index
``k * 2B / K``. This is ``gamma = 2 pi h`` up to a constant half-cell shift in
gamma; a constant right-multiplication by ``Z(.)`` commutes with the left
rotation action, so equivariance is unaffected, and for ``K = 2B`` lift and
unlift are exact inverses.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import TWO_PI, RotationZYZ, check_rotation, zyz_from_matrices, zyz_from_rot
from .harmonics import (
    EIGHT_PI2,
    angle_samples,
    beta_samples,
    degree_mask,
    rotate_coefficients,
    so3_forward_adjoint,
    so3_forward_array,
    so3_inverse_adjoint,
    so3_inverse_array,
)
from .sphgrid import GridSpec, SphericalVoxelGrid, voxel_centers


# ---------------------------------------------------------------------------
# lift / unlift


def _linear_matrix(n_out: int, n_in: int, positions: np.ndarray) -> np.ndarray:
    """Rows interpolate ``n_in`` samples at fractional ``positions`` (clamped)."""
    pos = np.clip(positions, 0.0, n_in - 1)
    lo = np.minimum(np.floor(pos).astype(int), max(n_in - 2, 0))
    t = pos - lo
    M = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if n_in == 1:
        M[:, 0] = 1.0
        return M
    M[rows, lo] += 1.0 - t
    M[rows, lo + 1] += t
    return M


@lru_cache(maxsize=64)
def lift_matrix(B: int, K: int) -> np.ndarray:
    """``(2B, K)`` matrix taking radial samples to gamma samples."""
    n = 2 * B
    M = _linear_matrix(n, K, np.arange(n) * K / n)
    M.setflags(write=False)
    return M


@lru_cache(maxsize=64)
def unlift_matrix(B: int, K: int) -> np.ndarray:
    """``(K, 2B)`` matrix taking gamma samples back to radial samples."""
    n = 2 * B
    M = _linear_matrix(K, n, np.arange(K) * n / K)
    M.setflags(write=False)
    return M


def lift_array(data: np.ndarray) -> np.ndarray:
    n, K = data.shape[-2], data.shape[-1]
    return data @ lift_matrix(n // 2, K).T


def unlift_array(sig: np.ndarray, K: int) -> np.ndarray:
    n = sig.shape[-1]
    return sig @ unlift_matrix(n // 2, K).T


def lift(grid: SphericalVoxelGrid) -> np.ndarray:
    """``(C, 2B, 2B, K)`` voxel grid to a ``(C, 2B, 2B, 2B)`` SO(3) signal."""
    return lift_array(grid.data)


def unlift(sig: np.ndarray, K: int, spec: GridSpec | None = None) -> SphericalVoxelGrid:
    sig = np.asarray(sig)
    if sig.ndim == 3:
        sig = sig[None]
    B = sig.shape[-1] // 2
    if spec is None:
        spec = GridSpec(B, K)
    elif spec.bandwidth != B or spec.h_res != K:
        raise ValueError("spec does not match the signal")
    return SphericalVoxelGrid(spec, unlift_array(sig, K))


# ---------------------------------------------------------------------------
# kernels


def ring_mask(spec: GridSpec) -> np.ndarray:
    """Support on the polar ring(s) nearest the equator and the innermost layer.

    The offset polar grid has two rings equally close to pi/2; both are kept.
    """
    _, b, _ = voxel_centers(spec)
    dist = np.abs(b - np.pi / 2)
    rings = np.isclose(dist, dist.min(), rtol=0.0, atol=1e-12)
    mask = np.zeros(spec.shape, dtype=bool)
    mask[:, rings, 0] = True
    return mask


@dataclass
class SvcKernel:
    """``C_out x C_in`` filter bank stored spatially on the voxel grid."""

    spec: GridSpec
    weights: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.weights.ndim != 5 or self.weights.shape[2:] != self.spec.shape:
            raise ValueError("kernel weights must have shape (C_out, C_in, 2B, 2B, K)")
        if self.mask.shape != self.spec.shape:
            raise ValueError("mask shape does not match the grid")
        self.weights = np.where(self.mask, self.weights, 0.0)

    @classmethod
    def ring(cls, spec: GridSpec, c_out: int, c_in: int, rng=None, scale: float = 1.0) -> "SvcKernel":
        mask = ring_mask(spec)
        if rng is None:
            w = np.zeros((c_out, c_in) + spec.shape)
        else:
            w = scale * rng.standard_normal((c_out, c_in) + spec.shape)
        return cls(spec, w, mask)

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]


def kernel_spectrum(weights: np.ndarray) -> np.ndarray:
    """Forward transform of the lifted filters, ``(C_out, C_in, B, 2B-1, 2B-1)``."""
    return so3_forward_array(lift_array(weights))


# ---------------------------------------------------------------------------
# spectral correlation on SO(3)


def _truncate(coeffs: np.ndarray, bandlimit: int | None) -> np.ndarray:
    if bandlimit is None or bandlimit >= coeffs.shape[-3]:
        return coeffs
    out = coeffs.copy()
    out[..., bandlimit:, :, :] = 0.0
    return out


def correlate_spectra(f_hat: np.ndarray, psi_hat: np.ndarray) -> np.ndarray:
    """Per-degree ``sum_i F_i @ Psi_oi^H / (8 pi^2)``.

    ``f_hat`` is ``(C_in, B, M, M)``, ``psi_hat`` is ``(C_out, C_in, B, M, M)``.
    """
    return np.einsum("ilmk,oilnk->olmn", f_hat, psi_hat.conj(), optimize=True) / EIGHT_PI2


CONVENTIONS = {
    "F Psi^H": lambda F, P: np.einsum("...mk,...nk->...mn", F, P.conj()),
    "Psi^H F": lambda F, P: np.einsum("...km,...kn->...mn", P.conj(), F),
    "F^H Psi": lambda F, P: np.einsum("...km,...kn->...mn", F.conj(), P),
    "Psi F^H": lambda F, P: np.einsum("...mk,...nk->...mn", P, F.conj()),
}


def so3_correlate(f: np.ndarray, psi: np.ndarray, convention: str = "F Psi^H") -> np.ndarray:
    """Spectral evaluation of ``P -> int psi(P^-1 S) f(S) dS`` channel-wise.

    ``f`` and ``psi`` are real ``(..., 2B, 2B, 2B)`` signals. ``convention``
    selects one of the four candidate coefficient products; only the default
    agrees with :func:`svc_oracle`.
    """
    F = so3_forward_array(f)
    P = so3_forward_array(psi)
    Z = CONVENTIONS[convention](F, P) / EIGHT_PI2
    return so3_inverse_array(Z * degree_mask(F.shape[-3])).real


def svc_forward(f: SphericalVoxelGrid, kernel: SvcKernel, bandlimit: int | None = None,
                psi_hat: np.ndarray | None = None) -> SphericalVoxelGrid:
    """Convolve a ``C_in``-channel grid with the filter bank.

    ``bandlimit`` keeps only degrees ``l < bandlimit`` in the spectral product.
    ``psi_hat`` may carry a cached :func:`kernel_spectrum` of ``kernel``.
    """
    spec = f.spec
    if kernel.spec.shape != spec.shape:
        raise ValueError("grid and kernel must share bandwidth and radial resolution")
    if f.channels != kernel.c_in:
        raise ValueError(f"kernel expects {kernel.c_in} input channels, got {f.channels}")
    out = svc_forward_array(f.data, kernel.weights, bandlimit, psi_hat)
    return SphericalVoxelGrid(spec, out)


def svc_forward_array(x: np.ndarray, weights: np.ndarray, bandlimit: int | None = None,
                      psi_hat: np.ndarray | None = None) -> np.ndarray:
    """Array form of :func:`svc_forward`; ``x`` is ``(C_in, ...)`` or ``(batch, C_in, ...)``."""
    K = x.shape[-1]
    if psi_hat is None:
        psi_hat = kernel_spectrum(weights)
    f_hat = so3_forward_array(lift_array(x))
    if x.ndim == 4:
        z = correlate_spectra(f_hat, psi_hat)
    else:
        z = np.einsum("bilmk,oilnk->bolmn", f_hat, psi_hat.conj(), optimize=True) / EIGHT_PI2
    z = _truncate(z, bandlimit)
    return unlift_array(so3_inverse_array(z).real, K)


def svc_backward(f: SphericalVoxelGrid, kernel: SvcKernel, upstream_grad: np.ndarray,
                 bandlimit: int | None = None, psi_hat: np.ndarray | None = None):
    """Adjoints of :func:`svc_forward` w.r.t. the input grid and the filters.

    Returns ``(grad_f, grad_kernel)``; ``grad_kernel`` vanishes off the mask.
    """
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    expected = (kernel.c_out,) + f.spec.shape
    if upstream_grad.shape != expected:
        raise ValueError(f"upstream gradient shape {upstream_grad.shape} != {expected}")
    return svc_backward_array(f.data, kernel.weights, kernel.mask, upstream_grad, bandlimit, psi_hat)


def svc_backward_array(x, weights, mask, upstream, bandlimit=None, psi_hat=None, need_input_grad=True):
    """Adjoints for :func:`svc_forward_array`; gradients of a batch are summed for the filters."""
    single = x.ndim == 4
    if single:
        x, upstream = x[None], upstream[None]
    n = x.shape[-2]
    B, K = n // 2, x.shape[-1]
    if psi_hat is None:
        psi_hat = kernel_spectrum(weights)
    f_hat = so3_forward_array(lift_array(x))
    g_sig = upstream @ unlift_matrix(B, K)
    g_z = _truncate(so3_inverse_adjoint(g_sig), bandlimit) / EIGHT_PI2
    lm = lift_matrix(B, K)
    # z_o = sum_i F_i Psi_oi^H  =>  dF_i = sum_o G_o Psi_oi,  dPsi_oi = G_o^H F_i
    g_psi = np.einsum("bolnm,bilnk->oilmk", g_z.conj(), f_hat, optimize=True)
    grad_w = (so3_forward_adjoint(g_psi) @ lm) * mask
    grad_x = None
    if need_input_grad:
        g_f = np.einsum("bolmn,oilnk->bilmk", g_z, psi_hat, optimize=True)
        grad_x = so3_forward_adjoint(g_f) @ lm
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_w


# ---------------------------------------------------------------------------
# brute-force reference


def _jy(l: int) -> np.ndarray:
    m = np.arange(-l, l + 1)
    J = np.zeros((2 * l + 1, 2 * l + 1), dtype=np.complex128)
    up = np.sqrt((l - m[:-1]) * (l + m[:-1] + 1.0)) / 2j
    J[np.arange(1, 2 * l + 1), np.arange(2 * l)] = up
    J[np.arange(2 * l), np.arange(1, 2 * l + 1)] = -up
    return J


@lru_cache(maxsize=64)
def _jy_eig(l: int):
    # J_y is Hermitian: d^l(beta) = V diag(exp(-i beta lam)) V^H
    lam, V = np.linalg.eigh(_jy(l))
    return lam, V


def wigner_d_eig(l: int, beta) -> np.ndarray:
    """``d^l(beta)`` via the spectral decomposition of ``J_y`` (reference route)."""
    lam, V = _jy_eig(l)
    beta = np.asarray(beta, dtype=np.float64)
    ph = np.exp(-1j * beta[..., None] * lam)
    return np.einsum("ak,...k,bk->...ab", V, ph, V.conj()).real


def legendre_weights(B: int) -> np.ndarray:
    """Quadrature weights from the moment system ``sum_j w_j P_l(cos b_j) = 2 delta_l0``."""
    x = np.cos(beta_samples(B))
    V = np.polynomial.legendre.legvander(x, 2 * B - 1).T
    rhs = np.zeros(2 * B)
    rhs[0] = 2.0
    return np.linalg.solve(V, rhs)


def _grid_matrices(B: int) -> np.ndarray:
    from .geometry import zyz_matrices

    a = angle_samples(B)
    b = beta_samples(B)
    A, Bt, G = np.meshgrid(a, b, a, indexing="ij")
    return zyz_matrices(A, Bt, G).reshape(-1, 3, 3)


def _direct_D_basis(l: int, alpha, beta, gamma) -> np.ndarray:
    m = np.arange(-l, l + 1)
    d = wigner_d_eig(l, beta)
    return np.exp(-1j * m * alpha[..., None])[..., :, None] * d * np.exp(-1j * m * gamma[..., None])[..., None, :]


def direct_forward(signal: np.ndarray) -> list[np.ndarray]:
    """O(B^6) quadrature of ``int f conj(D^l)``; one ``(..., 2l+1, 2l+1)`` array per degree."""
    n = signal.shape[-1]
    B = n // 2
    a = angle_samples(B)
    b = beta_samples(B)
    A, Bt, G = np.meshgrid(a, b, a, indexing="ij")
    wq = (np.pi / B) ** 2 * legendre_weights(B)[None, :, None] * np.ones((n, n, n))
    flat = signal.reshape(signal.shape[:-3] + (-1,)) * wq.reshape(-1)
    out = []
    for l in range(B):
        D = _direct_D_basis(l, A.reshape(-1), Bt.reshape(-1), G.reshape(-1))
        out.append(np.einsum("...s,smn->...mn", flat, D.conj()))
    return out


def _eval_bandlimited(coeffs: list[np.ndarray], alpha, beta, gamma) -> np.ndarray:
    total = 0.0
    for l, c in enumerate(coeffs):
        D = _direct_D_basis(l, alpha, beta, gamma)
        total = total + (2 * l + 1) / EIGHT_PI2 * np.einsum("...mn,cmn->c...", D, c)
    return np.real(total)


def interp_so3(sig: np.ndarray, alpha, beta, gamma) -> np.ndarray:
    """Trilinear interpolation of ``(..., 2B, 2B, 2B)`` grid samples.

    alpha and gamma are periodic; beta is clamped to the outermost samples.
    """
    n = sig.shape[-1]
    step = TWO_PI / n
    ua = np.mod(alpha, TWO_PI) / step
    ug = np.mod(gamma, TWO_PI) / step
    ub = np.clip(beta / (np.pi / n) - 0.5, 0.0, n - 1)
    ia = np.floor(ua).astype(int)
    ig = np.floor(ug).astype(int)
    ib = np.minimum(np.floor(ub).astype(int), n - 2)
    ta, tb, tg = ua - ia, ub - ib, ug - ig
    ia %= n
    ig %= n
    out = 0.0
    for da, wa in ((0, 1 - ta), (1, ta)):
        for db, wb in ((0, 1 - tb), (1, tb)):
            for dg, wg in ((0, 1 - tg), (1, tg)):
                out = out + wa * wb * wg * sig[..., (ia + da) % n, ib + db, (ig + dg) % n]
    return out


def svc_oracle(f: np.ndarray, psi: np.ndarray, interpolation: str = "bandlimited",
               chunk: int = 64) -> np.ndarray:
    """Direct spatial quadrature of ``P -> int psi(P^-1 S) f(S) dS`` on the grid.

    ``f`` and ``psi`` are ``(C, 2B, 2B, 2B)`` (paired channel-wise). The filter
    is evaluated off-grid either through its band-limited expansion (computed
    by brute-force quadrature with independently built Wigner matrices) or by
    trilinear interpolation of its samples. Cost is O(B^6); meant for B <= 6.
    """
    f = np.asarray(f, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if f.ndim == 3:
        f, psi = f[None], psi[None]
    if f.shape != psi.shape:
        raise ValueError("f and psi must have the same bandwidth and channel count")
    n = f.shape[-1]
    B = n // 2
    Rs = _grid_matrices(B)
    mu = (legendre_weights(B) / (2.0 * n * n))[None, :, None] * np.ones((n, n, n))
    fw = f.reshape(f.shape[0], -1) * mu.reshape(-1)
    coeffs = direct_forward(psi) if interpolation == "bandlimited" else None
    out = np.empty((f.shape[0], Rs.shape[0]))
    for start in range(0, Rs.shape[0], chunk):
        P = Rs[start : start + chunk]
        Q = np.einsum("pji,sjk->psik", P, Rs)  # P^T S = P^-1 S
        a, b, g = zyz_from_matrices(Q)
        if interpolation == "bandlimited":
            vals = _eval_bandlimited(coeffs, a, b, g)
        elif interpolation == "trilinear":
            vals = np.stack([interp_so3(p, a, b, g) for p in psi])
        else:
            raise ValueError(f"unknown interpolation {interpolation!r}")
        out[:, start : start + chunk] = np.einsum("cps,cs->cp", vals, fw)
    return out.reshape(f.shape)


# ---------------------------------------------------------------------------
# rotations of voxel signals


def _as_matrix(R) -> np.ndarray:
    return R.matrix if isinstance(R, RotationZYZ) else check_rotation(R)


def grid_shift(R, B: int, tol: float = 1e-9) -> int | None:
    """Number of alpha cells for a rotation about Z by a grid multiple, else None."""
    M = _as_matrix(R)
    if M[2, 2] < 1.0 - 1e-12:
        return None
    theta = np.arctan2(M[1, 0], M[0, 0])
    steps = theta / (np.pi / B)
    m = int(np.rint(steps))
    if abs(steps - m) > tol:
        return None
    return m % (2 * B)


def rotate_so3(sig: np.ndarray, R, method: str = "trilinear") -> np.ndarray:
    """``[L_R g](Q) = g(R^-1 Q)`` on the SO(3) grid."""
    M = _as_matrix(R)
    B = sig.shape[-1] // 2
    m = grid_shift(M, B)
    if m is not None:
        return np.roll(sig, m, axis=-3)
    if method == "spectral":
        coeffs = rotate_coefficients(so3_forward_array(sig), zyz_from_rot(M))
        return so3_inverse_array(coeffs).real
    if method != "trilinear":
        raise ValueError(f"unknown rotation method {method!r}")
    Q = np.einsum("ji,sjk->sik", M, _grid_matrices(B))
    a, b, g = zyz_from_matrices(Q)
    return interp_so3(sig, a, b, g).reshape(sig.shape)


def rotate_signal(grid: SphericalVoxelGrid, R, method: str = "trilinear") -> SphericalVoxelGrid:
    """Rotate a voxel signal through the SO(3) lift.

    Rotations about Z by multiples of ``pi/B`` are exact cyclic shifts along
    alpha. Other rotations resample the lifted signal, by trilinear
    interpolation or (``method="spectral"``) exactly on its band-limited part.
    """
    B, K = grid.spec.bandwidth, grid.spec.h_res
    m = grid_shift(R, B)
    if m is not None:
        return SphericalVoxelGrid(grid.spec, np.roll(grid.data, m, axis=1))
    sig = rotate_so3(lift(grid), R, method)
    return SphericalVoxelGrid(grid.spec, unlift_array(sig, K))
