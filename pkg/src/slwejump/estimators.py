"""Constant-time update kernels for the weak estimator and the sample mean.

Both estimators are instances of the same exponentially weighted recursion

    estimate_n = w_n * estimate_{n-1} + (1 - w_n) * x_n

with a constant weight ``w_n = lam`` for the weak estimator (SLWE) and
``w_n = (n - 1) / n`` for the running sample mean.  The variance of their
difference after ``n`` common observations does not depend on the data and
is available in closed form, see :func:`diff_variance`.

Scalar states hold a ``float``; vector states hold a ``list`` of ``r`` floats
and are updated with a category index (the one-hot position, 0-based).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Lower bound on the plug-in p(1 - p) so a mean sitting at exactly 0 or 1
# never yields a zero test variance.
CLAMP_FLOOR = 1e-6


def _check_lambda(lam: float) -> None:
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam!r}")


def weak_update(estimate: float, x: float, weight: float) -> float:
    """One step of the general recursion with weight ``weight`` on the past."""
    return weight * estimate + (1.0 - weight) * x


def effective_count(lam: float) -> int:
    """Number of sample-mean terms whose update step matches ``lam``.

    Solves ``(n - 1) / n = lam`` and rounds half-up, never returning less
    than one.

    >>> effective_count(0.95), effective_count(0.96)
    (20, 25)
    """
    _check_lambda(lam)
    return max(1, math.floor(1.0 / (1.0 - lam) + 0.5))


def variance_factor(n: int, lam: float) -> float:
    """Data-independent part of ``Var(slwe_n - mean_n)``, i.e. the variance
    divided by ``p(1 - p)``.

    The weighted-sum representation gives

        S_n = (1/n - lam**(n-1))**2 + sum_{i=2..n} (1/n - (1-lam) lam**(n-i))**2

    and summing the geometric series reduces it to

        S_n = (1-lam)/(1+lam) - 1/n + 2 lam/(1+lam) * lam**(2(n-1)).
    """
    if n < 1:
        raise ValueError(f"effective count must be >= 1, got {n!r}")
    _check_lambda(lam)
    if n == 1:
        return 0.0
    s = (1.0 - lam) / (1.0 + lam) - 1.0 / n + (2.0 * lam / (1.0 + lam)) * lam ** (2 * (n - 1))
    # cancellation can leave a ~1e-17 negative residue where S_n is exactly 0
    return max(s, 0.0)


def diff_variance(n: int, lam: float, p: float) -> float:
    """Variance of the weak estimator minus the sample mean after ``n`` draws."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    return p * (1.0 - p) * variance_factor(n, lam)


def limiting_variance(lam: float, p: float) -> float:
    """Stationary variance of the constant-``lam`` weak estimator."""
    _check_lambda(lam)
    return (1.0 - lam) / (1.0 + lam) * p * (1.0 - p)


@dataclass(frozen=True)
class VarianceSchedule:
    """Evaluates the test variance at an effective count with a clamped plug-in."""

    lam: float
    clamp_floor: float = CLAMP_FLOOR

    def __post_init__(self) -> None:
        _check_lambda(self.lam)
        if self.clamp_floor <= 0.0:
            raise ValueError("clamp_floor must be positive")

    def plug_in(self, p: float) -> float:
        return max(p * (1.0 - p), self.clamp_floor)

    def __call__(self, m: int, p: float) -> float:
        return self.plug_in(p) * variance_factor(m, self.lam)


@dataclass
class SlweState:
    """Weak estimator with constant forgetting factor ``lam`` (scalar stream).

    The first observation initializes the estimate directly, which is the
    recursion with ``lam_1 = 0``.
    """

    lam: float
    estimate: float | None = None

    def __post_init__(self) -> None:
        _check_lambda(self.lam)

    @property
    def initialized(self) -> bool:
        return self.estimate is not None

    def update(self, x: float) -> float:
        if self.estimate is None:
            self.estimate = float(x)
        else:
            self.estimate = self.lam * self.estimate + (1.0 - self.lam) * x
        return self.estimate


@dataclass
class MeanState:
    """Running sample mean with an explicit (possibly restarted) count."""

    estimate: float = 0.0
    count: int = 0

    def update(self, x: float) -> float:
        self.count += 1
        c = self.count
        self.estimate = ((c - 1) / c) * self.estimate + (1 / c) * x
        return self.estimate


@dataclass
class VectorSlweState:
    """Multinomial weak estimator over ``r`` categories."""

    lam: float
    r: int
    estimate: list[float] | None = None

    def __post_init__(self) -> None:
        _check_lambda(self.lam)
        if self.r < 2:
            raise ValueError("a multinomial stream needs r >= 2 categories")

    @property
    def initialized(self) -> bool:
        return self.estimate is not None

    def update(self, k: int) -> list[float]:
        """Fold in an observation of category ``k`` (0-based)."""
        if not 0 <= k < self.r:
            raise ValueError(f"category {k} outside 0..{self.r - 1}")
        if self.estimate is None:
            est = [0.0] * self.r
            est[k] = 1.0
        else:
            lam = self.lam
            est = [lam * e for e in self.estimate]
            est[k] = lam * self.estimate[k] + (1.0 - lam)
        self.estimate = est
        return est


@dataclass
class VectorMeanState:
    """Componentwise sample mean of one-hot observations."""

    r: int
    estimate: list[float] = field(default_factory=list)
    count: int = 0

    def __post_init__(self) -> None:
        if self.r < 2:
            raise ValueError("a multinomial stream needs r >= 2 categories")
        if not self.estimate:
            self.estimate = [0.0] * self.r

    def update(self, k: int) -> list[float]:
        if not 0 <= k < self.r:
            raise ValueError(f"category {k} outside 0..{self.r - 1}")
        self.count += 1
        c = self.count
        keep = (c - 1) / c
        est = [keep * e for e in self.estimate]
        est[k] = keep * self.estimate[k] + 1 / c
        self.estimate = est
        return est
