"""Fixed-length summaries of persistence diagrams.

* :func:`persistence_stats` -- moments and entropies of midlife and lifespan
  values plus the 1-norm of the Gaussian persistence curve (11 values).
* :func:`entropy_curve` -- the lifespan entropy curve ``le(x)``.
* :func:`hepc` -- coefficients of ``le`` in the orthonormal Hermite-function
  basis, computed in closed form (15 values).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtr

from .persistence import PersistenceDiagram, PersistenceError

PS_NAMES = (
    "mean_mid", "std_mid", "skew_mid", "kurt_mid", "entropy_mid",
    "mean_life", "std_life", "skew_life", "kurt_life", "entropy_life",
    "gauss_curve_l1",
)
N_HERMITE = 15
HEPC_NAMES = tuple(f"hermite_{n}" for n in range(N_HERMITE))

_SQRT2 = math.sqrt(2.0)
_PI_QUARTER = math.pi**0.25


@dataclass(frozen=True)
class SummaryVector:
    """Named summary values; ``degenerate`` marks an empty or zero-mass input."""

    values: NDArray[np.float64]
    names: tuple[str, ...]
    degenerate: bool = False


def finitize(pd: PersistenceDiagram, cap: float) -> PersistenceDiagram:
    """Replace infinite deaths by ``cap``; drop points left with zero persistence."""
    pts = pd.points.copy()
    if pts.size and np.any(pts[:, 0] > cap):
        raise PersistenceError(f"cap {cap} is below a birth value")
    inf = ~np.isfinite(pts[:, 1])
    pts[inf, 1] = cap
    pts = pts[pts[:, 1] > pts[:, 0]]
    return PersistenceDiagram(pts, dim=pd.dim, kind=pd.kind, n_truncated=pd.n_truncated, meta=pd.meta)


def _require_finite(pd: PersistenceDiagram) -> NDArray[np.float64]:
    pts = pd.points
    if pts.size and not np.all(np.isfinite(pts)):
        raise PersistenceError("summaries need a finite diagram; call finitize first")
    return pts


def _moments(v: NDArray[np.float64]) -> tuple[float, float, float, float]:
    mean = v.mean()
    c = v - mean
    m2 = np.mean(c * c)
    if m2 <= 0.0:
        return float(mean), 0.0, 0.0, 0.0
    m3 = np.mean(c**3)
    m4 = np.mean(c**4)
    return float(mean), float(np.sqrt(m2)), float(m3 / m2**1.5), float(m4 / m2**2)


def _entropy(weights: NDArray[np.float64], inside: NDArray[np.float64] | None = None) -> float:
    # -sum p log|q|, p = weights/total, q = inside/total (q = p by default);
    # |q| keeps midlife entropy finite when signal values are negative
    total = weights.sum()
    if total == 0.0:
        return 0.0
    p = weights / total
    q = p if inside is None else inside / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p != 0.0, -p * np.log(np.abs(q)), 0.0)
    return float(terms.sum())


def gaussian_curve_l1(lifespans: NDArray[np.float64], sigma: float = 1.0) -> float:
    """1-norm of the Gaussian persistence curve for the given lifespans."""
    z = lifespans / (_SQRT2 * sigma)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return float(np.sum(lifespans * ndtr(z) + _SQRT2 * sigma * pdf))


def persistence_stats(
    pd: PersistenceDiagram, *, sigma: float = 1.0, epy_m_literal: bool = False
) -> SummaryVector:
    """Eleven persistence statistics in the order of :data:`PS_NAMES`.

    Moments are population moments; kurtosis is non-excess.  With
    ``epy_m_literal`` the midlife entropy uses ``(d - b) / M`` inside the
    logarithm instead of ``(d + b) / M``.
    """
    pts = _require_finite(pd)
    if pts.shape[0] == 0:
        return SummaryVector(np.zeros(len(PS_NAMES)), PS_NAMES, degenerate=True)
    b, d = pts[:, 0], pts[:, 1]
    mid = 0.5 * (d + b)
    life = d - b
    sums = d + b
    out = [
        *_moments(mid),
        _entropy(sums, life if epy_m_literal else None),
        *_moments(life),
        _entropy(life),
        gaussian_curve_l1(life, sigma),
    ]
    return SummaryVector(np.asarray(out, dtype=np.float64), PS_NAMES)


def _lifespan_weights(pts: NDArray[np.float64]) -> NDArray[np.float64] | None:
    life = pts[:, 1] - pts[:, 0]
    total = life.sum()
    if pts.shape[0] == 0 or total <= 0.0:
        return None
    p = life / total
    return -p * np.log(p)


def entropy_curve(pd: PersistenceDiagram, x: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
    """Lifespan entropy curve evaluated at ``x`` (scalar or array)."""
    pts = _require_finite(pd)
    xs = np.asarray(x, dtype=np.float64)
    psi = _lifespan_weights(pts)
    if psi is None:
        out = np.zeros_like(xs)
    else:
        inside = (pts[:, 0] <= xs[..., None]) & (xs[..., None] < pts[:, 1])
        out = (inside * psi).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def hermite_functions(x: NDArray[np.float64] | float, n_max: int) -> NDArray[np.float64]:
    """Orthonormal Hermite functions ``h_0..h_{n_max}`` at ``x``; shape ``(n_max + 1, *x.shape)``."""
    xs = np.asarray(x, dtype=np.float64)
    h = np.empty((n_max + 1,) + xs.shape)
    h[0] = np.exp(-0.5 * xs * xs) / _PI_QUARTER
    if n_max >= 1:
        h[1] = _SQRT2 * xs * h[0]
    for n in range(1, n_max):
        h[n + 1] = xs * math.sqrt(2.0 / (n + 1)) * h[n] - math.sqrt(n / (n + 1)) * h[n - 1]
    return h


def hepc(pd: PersistenceDiagram, n_coeffs: int = N_HERMITE) -> SummaryVector:
    """Hermite coefficients ``alpha_0..alpha_{n_coeffs-1}`` of the lifespan entropy curve.

    Uses the closed-form integrals of ``h_0`` and ``h_1`` over each bar and
    the three-term recursion for higher orders, so no discretisation of the
    curve is involved.
    """
    pts = _require_finite(pd)
    names = HEPC_NAMES if n_coeffs == N_HERMITE else tuple(f"hermite_{n}" for n in range(n_coeffs))
    psi = _lifespan_weights(pts)
    if psi is None:
        return SummaryVector(np.zeros(n_coeffs), names, degenerate=True)
    b, d = pts[:, 0], pts[:, 1]
    pdf_b = np.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
    pdf_d = np.exp(-0.5 * d * d) / math.sqrt(2.0 * math.pi)
    alpha = np.zeros(n_coeffs)
    alpha[0] = np.sum(_SQRT2 * _PI_QUARTER * psi * (ndtr(d) - ndtr(b)))
    if n_coeffs > 1:
        alpha[1] = np.sum(2.0 * _PI_QUARTER * psi * (pdf_b - pdf_d))
    if n_coeffs > 2:
        hb = hermite_functions(b, n_coeffs - 2)
        hd = hermite_functions(d, n_coeffs - 2)
        for n in range(1, n_coeffs - 1):
            alpha[n + 1] = (
                _SQRT2 / math.sqrt(n + 1) * np.sum(psi * (hb[n] - hd[n]))
                + n / math.sqrt(n * (n + 1)) * alpha[n - 1]
            )
    return SummaryVector(alpha, names)
