"""Quantile functions and the two change tests (normal z-test, chi-squared test).

Everything here is computed in-process with the standard library so the
trackers stay free of heavyweight statistical dependencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation for the lower half of the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _check_prob(q: float) -> None:
    if not 0.0 < q < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {q!r}")


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def _normal_lower_quantile(p: float) -> float:
    # valid for 0 < p <= 0.5; accurate in the far lower tail
    if p < _P_LOW:
        t = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / \
            ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
    else:
        t = p - 0.5
        s = t * t
        x = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * t / \
            (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)
    # Halley refinement takes the ~1e-9 relative error to machine level
    for _ in range(2):
        e = normal_cdf(x) - p
        u = e * _SQRT2PI * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF."""
    _check_prob(q)
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return _normal_lower_quantile(q)
    # 1 - q is exact for q in [0.5, 1)
    return -_normal_lower_quantile(1.0 - q)


def _gamma_series(a: float, x: float) -> float:
    # regularized lower incomplete gamma P(a, x), for x < a + 1
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # regularized upper incomplete gamma Q(a, x) via modified Lentz, x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _check_df(df: int) -> None:
    if int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be an integer >= 1, got {df!r}")


def chi2_cdf(x: float, df: int) -> float:
    _check_df(df)
    if x <= 0.0:
        return 0.0
    a, h = 0.5 * df, 0.5 * x
    if h < a + 1.0:
        return _gamma_series(a, h)
    return 1.0 - _gamma_cont_frac(a, h)


def chi2_sf(x: float, df: int) -> float:
    _check_df(df)
    if x <= 0.0:
        return 1.0
    a, h = 0.5 * df, 0.5 * x
    if h < a + 1.0:
        return 1.0 - _gamma_series(a, h)
    return _gamma_cont_frac(a, h)


def _chi2_logpdf(x: float, df: int) -> float:
    a = 0.5 * df
    return (a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a)


def chi2_quantile(df: int, q: float) -> float:
    """Inverse CDF of the chi-squared distribution with ``df`` degrees of freedom.

    Solves on whichever tail holds the smaller mass so upper quantiles such
    as ``q = 1 - 1e-5`` keep full relative precision.
    """
    _check_df(df)
    _check_prob(q)
    upper = q > 0.5
    target = 1.0 - q if upper else q

    def resid(x: float) -> float:
        return (chi2_sf(x, df) if upper else chi2_cdf(x, df)) - target

    # Wilson-Hilferty starting point
    z = normal_quantile(q)
    k = float(df)
    x = k * (1.0 - 2.0 / (9.0 * k) + z * math.sqrt(2.0 / (9.0 * k))) ** 3
    if not x > 0.0:
        x = 1e-3
    lo, hi = 0.0, max(2.0 * x, k + 10.0)
    while resid(hi) * (-1.0 if upper else 1.0) < 0.0:
        hi *= 2.0
    # resid is decreasing in x for the upper tail, increasing for the lower
    sign = -1.0 if upper else 1.0
    for _ in range(200):
        if not lo < x < hi:
            x = 0.5 * (lo + hi)
        r = resid(x)
        if sign * r > 0.0:
            hi = x
        else:
            lo = x
        step = sign * r / math.exp(_chi2_logpdf(x, df))
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-14 * max(x, 1e-300):
            return x_new
        x = x_new
    return x


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    statistic: float
    threshold: float
    rejected: bool

    @classmethod
    def decide(cls, statistic: float, threshold: float) -> TestOutcome:
        return cls(statistic, threshold, statistic > threshold)


def z_test(slwe_estimate: float, mean_estimate: float, variance: float,
           threshold: float) -> TestOutcome:
    """Reject stationarity when ``|slwe - mean| / sd`` strictly exceeds ``threshold``."""
    if not variance > 0.0:
        raise ValueError(f"test variance must be positive, got {variance!r}")
    stat = abs(slwe_estimate - mean_estimate) / math.sqrt(variance)
    return TestOutcome.decide(stat, threshold)


def chi2_test(slwe_vector: Sequence[float], mean_vector: Sequence[float],
              variances: Sequence[float], threshold: float) -> TestOutcome:
    """Sum of squared standardized component differences over all ``r`` categories."""
    r = len(slwe_vector)
    if len(mean_vector) != r or len(variances) != r:
        raise ValueError("estimate vectors and variances must have equal length")
    if r < 2:
        raise ValueError("need at least two categories")
    stat = 0.0
    for a, b, v in zip(slwe_vector, mean_vector, variances):
        if not v > 0.0:
            raise ValueError(f"component variance must be positive, got {v!r}")
        d = a - b
        stat += d * d / v
    return TestOutcome.decide(stat, threshold)


def z_threshold(alpha: float) -> float:
    """Two-sided normal critical value ``z_{alpha/2}``."""
    _check_prob(alpha)
    return normal_quantile(1.0 - 0.5 * alpha)


def chi2_threshold(r: int, alpha: float) -> float:
    """Upper ``alpha`` critical value of chi-squared with ``r - 1`` degrees of freedom."""
    _check_prob(alpha)
    return chi2_quantile(r - 1, 1.0 - alpha)


@dataclass(frozen=True)
class TestConfig:
    """When to test and how strict to be.

    Exactly one of ``alpha`` or ``threshold`` is given.  ``cadence`` is the
    number of steps between tests; no test runs before the effective count
    reaches ``warmup``.
    """

    __test__ = False

    alpha: float | None = None
    threshold: float | None = None
    cadence: int = 10
    warmup: int = 2

    def __post_init__(self) -> None:
        if (self.alpha is None) == (self.threshold is None):
            raise ValueError("give exactly one of alpha or threshold")
        if self.alpha is not None:
            _check_prob(self.alpha)
        if self.threshold is not None and not self.threshold >= 0.0:
            raise ValueError("threshold must be nonnegative")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.warmup < 2:
            raise ValueError("warmup must be >= 2")

    def binomial_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        return z_threshold(self.alpha)

    def multinomial_threshold(self, r: int) -> float:
        if self.threshold is not None:
            return self.threshold
        return chi2_threshold(r, self.alpha)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "threshold": self.threshold,
                "cadence": self.cadence, "warmup": self.warmup}

    @classmethod
    def from_dict(cls, d: dict) -> TestConfig:
        return cls(alpha=d.get("alpha"), threshold=d.get("threshold"),
                   cadence=int(d.get("cadence", 10)), warmup=int(d.get("warmup", 2)))
