"""Wigner-d matrices, Driscoll-Healy quadrature and SO(3) Fourier transforms.

Conventions
-----------
``D^l_{mn}(alpha, beta, gamma) = exp(-i m alpha) d^l_{mn}(beta) exp(-i n gamma)``
with ``d^l(beta) = exp(-i beta J_y)`` (Condon-Shortley). This makes
``D(R1 R2) = D(R1) D(R2)`` for ``R = Z(alpha) Y(beta) Z(gamma)``.

Forward transform (unnormalized measure, total mass ``8 pi^2``)::

    F^l_{mn} = int f(R) conj(D^l_{mn}(R)) dR

Inverse::

    f(R) = sum_l (2l+1)/(8 pi^2) sum_{mn} F^l_{mn} D^l_{mn}(R)

Signals live on the ``2B x 2B x 2B`` grid ``alpha_i = 2 pi i/2B``,
``beta_j = pi (2j+1)/4B``, ``gamma_k = 2 pi k/2B``. Spectra are stored densely
as ``(..., B, 2B-1, 2B-1)`` complex arrays indexed ``[l, m+B-1, n+B-1]``; entries
with ``max(|m|, |n|) > l`` are zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import lgamma

import numpy as np

EIGHT_PI2 = 8.0 * np.pi**2


def beta_samples(B: int) -> np.ndarray:
    return np.pi * (2 * np.arange(2 * B) + 1) / (4 * B)


def angle_samples(B: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(2 * B) / (2 * B)


def _edge_value(l, m, n, cb2, sb2):
    """``d^l_{mn}`` when ``max(|m|, |n|) == l`` (a single-term closed form)."""
    # d^l_{l,n} = (-1)^(l-n) sqrt(C(2l, l+n)) cos^(l+n) sin^(l-n)
    if m == l:
        top, other, sign = l, n, (-1) ** (l - n)
    elif m == -l:
        # d_{-l,n} = d_{-n,l} = (-1)^(l+n) d_{l,-n}
        top, other, sign = l, -n, (-1) ** (l + n) * (-1) ** (l + n)
    elif n == l:
        # d_{m,l} = (-1)^(l-m) d_{l,m}
        top, other, sign = l, m, (-1) ** (l - m) * (-1) ** (l - m)
    else:
        # d_{m,-l} = d_{l,-m}
        top, other, sign = l, -m, (-1) ** (l + m)
    log_binom = 0.5 * (lgamma(2 * top + 1) - lgamma(top + other + 1) - lgamma(top - other + 1))
    with np.errstate(divide="ignore"):
        val = np.exp(log_binom) * cb2 ** (top + other) * sb2 ** (top - other)
    return sign * val


def wigner_d_all(L: int, beta) -> list[np.ndarray]:
    """``d^l(beta)`` for ``l = 0..L-1``.

    Returns a list whose ``l``-th entry has shape ``beta.shape + (2l+1, 2l+1)``.
    Interior entries come from the three-term recurrence in ``l`` for fixed
    ``(m, n)``; the border ``max(|m|, |n|) = l`` is seeded in closed form.
    """
    beta = np.asarray(beta, dtype=np.float64)
    cb = np.cos(beta)
    cb2 = np.cos(beta / 2.0)
    sb2 = np.sin(beta / 2.0)
    out: list[np.ndarray] = []
    for l in range(L):
        size = 2 * l + 1
        d = np.empty(beta.shape + (size, size))
        if l == 0:
            d[..., 0, 0] = 1.0
            out.append(d)
            continue
        m = np.arange(-(l - 1), l)
        mm, nn = m[:, None], m[None, :]
        prev = out[l - 1]
        lp = l - 1  # recurrence from l-1 (and l-2) to l
        a_next = lp * np.sqrt((l * l - mm * mm) * (l * l - nn * nn).astype(np.float64))
        lin = (2 * lp + 1) * (lp * (lp + 1) * cb[..., None, None] - mm * nn)
        acc = lin * prev
        if lp >= 1:
            pp = np.zeros(beta.shape + (2 * lp + 1, 2 * lp + 1))
            pp[..., 1:-1, 1:-1] = out[l - 2] if l >= 2 else 0.0
            a_prev = (lp + 1) * np.sqrt(((lp * lp - mm * mm) * (lp * lp - nn * nn)).clip(min=0).astype(np.float64))
            acc = acc - a_prev * pp
            d[..., 1:-1, 1:-1] = acc / a_next
        else:
            # l == 1 interior is just d^1_{00} = cos(beta)
            d[..., 1, 1] = cb
        for idx in range(size):
            v = idx - l
            for m_, n_ in ((l, v), (-l, v), (v, l), (v, -l)):
                d[..., m_ + l, n_ + l] = _edge_value(l, m_, n_, cb2, sb2)
        out.append(d)
    return out


def wigner_d(l: int, beta: float) -> np.ndarray:
    """Real ``(2l+1) x (2l+1)`` matrix ``d^l(beta)``; rows/cols are ``m, n = -l..l``."""
    if l < 0:
        raise ValueError("degree must be non-negative")
    return wigner_d_all(l + 1, float(beta))[l]


def wigner_D(l: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    m = np.arange(-l, l + 1)
    return np.exp(-1j * m * alpha)[:, None] * wigner_d(l, beta) * np.exp(-1j * m * gamma)[None, :]


def quadrature_weights(B: int) -> np.ndarray:
    """Weights on ``beta_j = pi (2j+1)/4B`` integrating ``g(beta) sin(beta)``.

    Exact for every trigonometric polynomial of degree below ``2B`` in beta,
    in particular ``sum_j w_j P_l(cos beta_j) = 2 delta_{l0}`` for ``l < 2B``.
    """
    if B < 2:
        raise ValueError("bandwidth must be >= 2")
    j = np.arange(2 * B)
    k = np.arange(B)
    arg = (2 * j[:, None] + 1) * (2 * k[None, :] + 1) * np.pi / (4 * B)
    inner = (np.sin(arg) / (2 * k[None, :] + 1)).sum(axis=1)
    return (2.0 / B) * np.sin(np.pi * (2 * j + 1) / (4 * B)) * inner


@lru_cache(maxsize=16)
def wigner_table(B: int) -> np.ndarray:
    """Dense ``(B, 2B-1, 2B-1, 2B)`` table of ``d^l_{mn}(beta_j)``."""
    size = 2 * B - 1
    table = np.zeros((B, size, size, 2 * B))
    ds = wigner_d_all(B, beta_samples(B))
    for l, d in enumerate(ds):
        lo = B - 1 - l
        table[l, lo : lo + 2 * l + 1, lo : lo + 2 * l + 1, :] = np.moveaxis(d, 0, -1)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=16)
def degree_mask(B: int) -> np.ndarray:
    m = np.abs(np.arange(-(B - 1), B))
    mx = np.maximum(m[:, None], m[None, :])
    mask = mx[None, :, :] <= np.arange(B)[:, None, None]
    mask.setflags(write=False)
    return mask


def _fold(B: int) -> np.ndarray:
    """FFT bin index for each order ``m = -(B-1)..B-1`` on a ``2B`` grid."""
    return np.mod(np.arange(-(B - 1), B), 2 * B)


def _analysis(signal: np.ndarray, beta_weights: np.ndarray) -> np.ndarray:
    """``sum_ijk beta_weights_j s_ijk e^{i m a_i} d^l_mn(b_j) e^{i n g_k}``."""
    n = signal.shape[-1]
    B = n // 2
    S = np.fft.ifft2(signal, axes=(-3, -1)) * (n * n)
    fold = _fold(B)
    S = S[..., fold, :, :][..., fold]  # (..., m, j, n)
    S = S * beta_weights[:, None]
    return np.einsum("lmnj,...mjn->...lmn", wigner_table(B), S, optimize=True)


def _synthesis(coeffs: np.ndarray, degree_weights: np.ndarray) -> np.ndarray:
    """``sum_lmn degree_weights_l F^l_mn e^{-i m a_i} d^l_mn(b_j) e^{-i n g_k}``."""
    B = coeffs.shape[-3]
    n = 2 * B
    T = np.einsum("lmnj,...lmn->...mjn", wigner_table(B), coeffs * degree_weights[:, None, None], optimize=True)
    full = np.zeros(T.shape[:-3] + (n, n, n), dtype=np.complex128)  # (..., m, n, j)
    fold = _fold(B)
    full[..., fold[:, None], fold[None, :], :] = np.moveaxis(T, -2, -1)
    return np.fft.fft2(np.moveaxis(full, -1, -2), axes=(-3, -1))


def _check_signal(signal: np.ndarray) -> int:
    s = signal.shape
    if len(s) < 3 or not (s[-1] == s[-2] == s[-3]) or s[-1] % 2 or s[-1] < 4:
        raise ValueError(f"expected (..., 2B, 2B, 2B) signal, got {s}")
    return s[-1] // 2


@dataclass(frozen=True)
class So3Spectrum:
    """Generalized Fourier coefficients, dense ``(C, B, 2B-1, 2B-1)`` complex."""

    coeffs: np.ndarray

    @property
    def bandwidth(self) -> int:
        return self.coeffs.shape[-3]

    def degree(self, l: int, channel: int = 0) -> np.ndarray:
        B = self.bandwidth
        lo = B - 1 - l
        return self.coeffs[channel, l, lo : lo + 2 * l + 1, lo : lo + 2 * l + 1]


def so3_forward_array(signal: np.ndarray) -> np.ndarray:
    B = _check_signal(signal)
    step = np.pi / B
    return _analysis(signal, step * step * quadrature_weights(B))


def so3_inverse_array(coeffs: np.ndarray) -> np.ndarray:
    B = coeffs.shape[-3]
    return _synthesis(coeffs, (2 * np.arange(B) + 1) / EIGHT_PI2)


def so3_forward(signal: np.ndarray) -> So3Spectrum:
    """Forward transform of a ``(C, 2B, 2B, 2B)`` (or single ``2B^3``) signal."""
    signal = np.asarray(signal)
    if signal.ndim == 3:
        signal = signal[None]
    if signal.ndim != 4:
        raise ValueError("signal must have shape (C, 2B, 2B, 2B)")
    return So3Spectrum(so3_forward_array(signal))


def so3_inverse(spectrum: So3Spectrum, real: bool = True) -> np.ndarray:
    """Grid samples of the band-limited function with the given coefficients.

    ``real=True`` drops the imaginary part, which is round-off for spectra of
    real signals.
    """
    out = so3_inverse_array(spectrum.coeffs)
    return out.real if real else out


# adjoints of the real-valued linear maps, used by the convolution backward pass


def so3_forward_adjoint(grad_coeffs: np.ndarray) -> np.ndarray:
    """Adjoint of ``signal -> so3_forward_array(signal)`` for real signals."""
    B = grad_coeffs.shape[-3]
    step = np.pi / B
    g = _synthesis(grad_coeffs, np.ones(B)).real
    return g * (step * step * quadrature_weights(B))[:, None]


def so3_inverse_adjoint(grad_signal: np.ndarray) -> np.ndarray:
    """Adjoint of ``coeffs -> Re(so3_inverse_array(coeffs))``."""
    B = _check_signal(grad_signal)
    c = _analysis(grad_signal, np.ones(2 * B))
    return c * ((2 * np.arange(B) + 1) / EIGHT_PI2)[:, None, None]


def rotation_coefficients(B: int, R_zyz: tuple[float, float, float]) -> np.ndarray:
    """Dense ``(B, 2B-1, 2B-1)`` stack of ``D^l(R)`` matrices."""
    a, b, g = R_zyz
    size = 2 * B - 1
    out = np.zeros((B, size, size), dtype=np.complex128)
    ds = wigner_d_all(B, b)
    m = np.arange(-(B - 1), B)
    phase_a = np.exp(-1j * m * a)
    phase_g = np.exp(-1j * m * g)
    for l, d in enumerate(ds):
        lo = B - 1 - l
        sl = slice(lo, lo + 2 * l + 1)
        out[l, sl, sl] = phase_a[sl, None] * d * phase_g[None, sl]
    return out


def rotate_coefficients(coeffs: np.ndarray, R_zyz) -> np.ndarray:
    """Coefficients of ``g(R^-1 .)`` given those of ``g``: ``conj(D(R)) @ F``."""
    D = rotation_coefficients(coeffs.shape[-3], R_zyz)
    return np.einsum("lmk,...lkn->...lmn", D.conj(), coeffs)


def random_bandlimited(B: int, rng: np.random.Generator, channels: int | None = None, max_degree: int | None = None):
    """Real band-limited signal obtained by projecting white noise."""
    shape = (2 * B,) * 3 if channels is None else (channels,) + (2 * B,) * 3
    noise = rng.standard_normal(shape)
    coeffs = so3_forward_array(noise)
    if max_degree is not None:
        coeffs[..., max_degree + 1 :, :, :] = 0.0
    return so3_inverse_array(coeffs).real
