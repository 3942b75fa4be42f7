"""Scalar robust and distributional helpers."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, ndtri

from .errors import ArgumentError

#: relative slack under which two window variances count as tied
TIE_RTOL = 1e-12


class LocationScale(NamedTuple):
    location: float
    scale: float


class UnivariateMcd(NamedTuple):
    estimate: LocationScale
    subset: np.ndarray
    raw_scale: float
    consistency: float


def chi2_cdf(x: float, df: float) -> float:
    """Chi-square distribution function (regularized lower incomplete gamma)."""
    if not df > 0:
        raise ArgumentError(f"df must be positive, got {df}")
    if x <= 0:
        return 0.0
    return float(gammainc(0.5 * df, 0.5 * x))


def chi2_quantile(df: float, p: float) -> float:
    """Inverse of :func:`chi2_cdf` in its first argument.

    The root is bracketed by doubling and then polished with Brent's method,
    which is safe because the distribution function is strictly increasing.
    """
    if not df > 0:
        raise ArgumentError(f"df must be positive, got {df}")
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"p must lie in (0, 1), got {p}")
    lo, hi = 0.0, max(2.0 * df, 1.0)
    while gammainc(0.5 * df, 0.5 * hi) < p:
        lo, hi = hi, 2.0 * hi
    return float(
        brentq(lambda x: gammainc(0.5 * df, 0.5 * x) - p, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    )


def std_normal_quantile(p: float) -> float:
    """Standard normal quantile function."""
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"p must lie in (0, 1), got {p}")
    return float(ndtri(p))


def consistency_factor(alpha: float, p_dim: int) -> float:
    """Multiplier making a trimmed covariance consistent at the normal model.

    Trimming a ``p_dim``-variate normal sample to the fraction ``alpha`` of
    points with smallest distances shrinks the covariance by
    ``P(chi2_{p+2} <= q) / alpha`` with ``q`` the ``alpha``-quantile of
    ``chi2_p``; this returns the reciprocal.
    """
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    if p_dim < 1:
        raise ArgumentError("p_dim must be a positive integer")
    if alpha == 1.0:
        return 1.0
    q = chi2_quantile(p_dim, alpha)
    return alpha / chi2_cdf(q, p_dim + 2)


def default_univariate_h(n: int) -> int:
    return (n + 2) // 2


def univariate_mcd(values, h: int | None = None, consistency: bool = True) -> UnivariateMcd:
    """Exact univariate MCD by a sweep over windows of the sorted values.

    Among the ``n - h + 1`` contiguous windows of length ``h`` in sorted
    order, the one with the smallest variance is selected (earliest window
    on ties). The location is its mean; the scale is its standard deviation
    (``h - 1`` denominator), multiplied by ``sqrt(consistency_factor(h/n, 1))``
    when ``consistency`` is true.

    Returns the estimate, the original indices of the chosen window (sorted
    ascending), the uncorrected scale and the variance factor applied.
    """
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ArgumentError("univariate MCD needs at least two values")
    if h is None:
        h = default_univariate_h(n)
    if not (n + 2) // 2 <= h <= n:
        raise ArgumentError(f"h={h} must lie in [{(n + 2) // 2}, {n}]")

    order = np.argsort(x, kind="stable")
    xs = x[order]
    # center before summing squares so the running variance does not cancel
    xc = xs - xs[(n - 1) // 2]
    c1 = np.concatenate(([0.0], np.cumsum(xc)))
    c2 = np.concatenate(([0.0], np.cumsum(xc * xc)))
    s1 = c1[h:] - c1[:-h]
    s2 = c2[h:] - c2[:-h]
    ss = s2 - s1 * s1 / h
    # exact recomputation for the candidates near the minimum guards against
    # round-off deciding between windows of (nearly) equal spread
    band = 1e-9 * max(ss.min(), 0.0) + 64 * np.finfo(float).eps * s2.max()
    near = np.flatnonzero(ss <= ss.min() + band)
    exact = np.array([((xs[j : j + h] - xs[j : j + h].mean()) ** 2).sum() for j in near])
    # windows tied up to rounding go to the earliest start, which keeps the
    # choice stable under affine maps of the data
    pick = int(np.flatnonzero(exact <= exact.min() * (1.0 + TIE_RTOL))[0])
    best, best_ss = int(near[pick]), float(exact[pick])
    window = xs[best : best + h]
    loc = float(window.mean())
    raw = float(np.sqrt(best_ss / (h - 1)))
    factor = consistency_factor(h / n, 1) if consistency else 1.0
    subset = np.sort(order[best : best + h])
    return UnivariateMcd(LocationScale(loc, raw * float(np.sqrt(factor))), subset, raw, factor)
