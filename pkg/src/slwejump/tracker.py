"""Sample mean with detection-triggered jumps, for Bernoulli and multinomial streams.

A tracker runs a constant-``lam`` weak estimator next to a restartable
sample mean.  Every ``cadence`` steps (once the effective count has reached
``warmup``) the two are compared; if the test rejects stationarity the mean
jumps according to its :class:`JumpPolicy` and its effective count restarts.
The weak estimator itself is never touched by a jump.

Trackers are mutable, single-writer objects.  ``copy.deepcopy`` or a
snapshot round trip gives an independent value.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .detect import TestConfig, TestOutcome, chi2_test, z_test
from .estimators import (
    CLAMP_FLOOR,
    MeanState,
    SlweState,
    VarianceSchedule,
    VectorMeanState,
    VectorSlweState,
    effective_count,
    variance_factor,
)

SNAPSHOT_FORMAT = "slwejump.tracker"
SNAPSHOT_VERSION = 1

DEFAULT_LAMBDA = 0.95
DEFAULT_Z = 3.0
DEFAULT_CHI2 = 25.0
DEFAULT_CADENCE = 10


class JumpMode(str, enum.Enum):
    RESET = "reset"   # restart from the current observation
    ADOPT = "adopt"   # take over the weak estimator's value
    BLEND = "blend"   # weight * slwe + (1 - weight) * observation


@dataclass(frozen=True)
class JumpPolicy:
    """How the mean is re-seeded after a rejected test.

    ``restart_count`` is the effective count installed after the jump.  When
    left as ``None`` it defaults to 1 for ``RESET``, to
    :func:`effective_count` for ``ADOPT`` and to the rounded interpolation
    ``weight * effective_count + (1 - weight)`` for ``BLEND``.
    """

    mode: JumpMode = JumpMode.ADOPT
    weight: float = 0.5
    restart_count: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", JumpMode(self.mode))
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("blend weight must lie in [0, 1]")
        if self.restart_count is not None and self.restart_count < 1:
            raise ValueError("restart_count must be >= 1")

    def resolved_count(self, lam: float) -> int:
        if self.restart_count is not None:
            return self.restart_count
        if self.mode is JumpMode.RESET:
            return 1
        n_tilde = effective_count(lam)
        if self.mode is JumpMode.ADOPT:
            return n_tilde
        return max(1, math.floor(self.weight * n_tilde + (1.0 - self.weight) + 0.5))

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "weight": self.weight,
                "restart_count": self.restart_count}

    @classmethod
    def from_dict(cls, d: dict) -> JumpPolicy:
        return cls(JumpMode(d["mode"]), float(d.get("weight", 0.5)), d.get("restart_count"))


class JumpRecord(NamedTuple):
    step: int
    before: float | tuple[float, ...]
    after: float | tuple[float, ...]


class StepResult(NamedTuple):
    estimate: float | list[float]
    outcome: TestOutcome | None


class Trace(NamedTuple):
    """Per-step estimates from :meth:`BinomialTracker.run` (or the multinomial analogue)."""

    jump: np.ndarray
    slwe: np.ndarray
    tested: np.ndarray
    jumped: np.ndarray


class _TrackerBase:
    kind = ""

    def __init__(self, lam: float, config: TestConfig | None,
                 policy: JumpPolicy | None, clamp_floor: float) -> None:
        self.lam = lam
        self.config = config if config is not None else TestConfig(threshold=self._default_threshold())
        self.policy = policy if policy is not None else JumpPolicy()
        self.schedule = VarianceSchedule(lam, clamp_floor)
        self.restart_count = self.policy.resolved_count(lam)
        self.step_index = 0
        self.jumps: list[JumpRecord] = []

    def _default_threshold(self) -> float:
        raise NotImplementedError

    @property
    def m(self) -> int:
        """Effective count of the restartable mean."""
        return self.mean.count

    def _due(self) -> bool:
        cfg = self.config
        return self.step_index % cfg.cadence == 0 and self.mean.count >= cfg.warmup

    def variance_at(self, m: int, p: float) -> float:
        return self.schedule(m, p)

    # snapshots ---------------------------------------------------------------

    def _snapshot_common(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": self.kind,
            "lambda": self.lam,
            "clamp_floor": self.schedule.clamp_floor,
            "threshold": self.threshold,
            "config": self.config.to_dict(),
            "policy": self.policy.to_dict(),
            "step": self.step_index,
            "m": self.mean.count,
        }

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_snapshot(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _check_snapshot(d: dict, kind: str) -> None:
    if d.get("format") != SNAPSHOT_FORMAT:
        raise ValueError("not a tracker snapshot")
    if d.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {d.get('version')!r}")
    if d.get("kind") != kind:
        raise ValueError(f"snapshot holds a {d.get('kind')!r} tracker, expected {kind!r}")


class BinomialTracker(_TrackerBase):
    """Jump estimator for a stream of 0/1 observations.

    >>> t = BinomialTracker(lam=0.9, config=TestConfig(threshold=math.inf))
    >>> [round(t.step(x).estimate, 3) for x in (1, 0, 1, 1)]
    [1.0, 0.5, 0.667, 0.75]
    """

    kind = "binomial"

    def __init__(self, lam: float = DEFAULT_LAMBDA, config: TestConfig | None = None,
                 policy: JumpPolicy | None = None, clamp_floor: float = CLAMP_FLOOR) -> None:
        self.slwe = SlweState(lam)
        self.mean = MeanState()
        super().__init__(lam, config, policy, clamp_floor)
        self.threshold = self.config.binomial_threshold()

    def _default_threshold(self) -> float:
        return DEFAULT_Z

    @property
    def estimate(self) -> float:
        return self.mean.estimate

    def test(self) -> TestOutcome | None:
        """Compare the two estimators now; ``None`` where the variance vanishes."""
        var = self.schedule(self.mean.count, self.mean.estimate)
        if var == 0.0:
            return None
        return z_test(self.slwe.estimate, self.mean.estimate, var, self.threshold)

    def step(self, x: int) -> StepResult:
        if x != 0 and x != 1:
            raise ValueError(f"binary observation expected, got {x!r}")
        self.step_index += 1
        self.slwe.update(x)
        self.mean.update(x)
        outcome = None
        if self._due():
            outcome = self.test()
            if outcome is not None and outcome.rejected:
                self.apply_jump(x)
        return StepResult(self.mean.estimate, outcome)

    def apply_jump(self, x: int) -> None:
        before = self.mean.estimate
        mode = self.policy.mode
        if mode is JumpMode.ADOPT:
            after = self.slwe.estimate
        elif mode is JumpMode.RESET:
            after = float(x)
        else:
            w = self.policy.weight
            after = w * self.slwe.estimate + (1.0 - w) * x
        self.mean.estimate = after
        self.mean.count = self.restart_count
        self.jumps.append(JumpRecord(self.step_index, before, after))

    def run(self, observations: Iterable[int]) -> Trace:
        obs = list(observations)
        jump = np.empty(len(obs))
        slwe = np.empty(len(obs))
        tested = np.zeros(len(obs), dtype=bool)
        jumped = np.zeros(len(obs), dtype=bool)
        n_jumps = len(self.jumps)
        for i, x in enumerate(obs):
            res = self.step(int(x))
            jump[i] = res.estimate
            slwe[i] = self.slwe.estimate
            if res.outcome is not None:
                tested[i] = True
                if len(self.jumps) != n_jumps:
                    jumped[i] = True
                    n_jumps = len(self.jumps)
        return Trace(jump, slwe, tested, jumped)

    def to_snapshot(self) -> dict:
        d = self._snapshot_common()
        d["slwe"] = self.slwe.estimate
        d["mean"] = self.mean.estimate
        d["jumps"] = [list(j) for j in self.jumps]
        return d

    @classmethod
    def from_snapshot(cls, d: dict) -> BinomialTracker:
        _check_snapshot(d, cls.kind)
        t = cls(lam=float(d["lambda"]), config=TestConfig.from_dict(d["config"]),
                policy=JumpPolicy.from_dict(d["policy"]), clamp_floor=float(d["clamp_floor"]))
        t.slwe.estimate = None if d["slwe"] is None else float(d["slwe"])
        t.mean.estimate = float(d["mean"])
        t.mean.count = int(d["m"])
        t.step_index = int(d["step"])
        t.jumps = [JumpRecord(int(s), float(b), float(a)) for s, b, a in d["jumps"]]
        return t

    @classmethod
    def load(cls, path: str | os.PathLike) -> BinomialTracker:
        with open(path, encoding="utf-8") as fh:
            return cls.from_snapshot(json.load(fh))


class MultinomialTracker(_TrackerBase):
    """Jump estimator for a stream of category indices ``0 .. r-1``."""

    kind = "multinomial"

    def __init__(self, r: int, lam: float = DEFAULT_LAMBDA, config: TestConfig | None = None,
                 policy: JumpPolicy | None = None, clamp_floor: float = CLAMP_FLOOR) -> None:
        self.r = r
        self.slwe = VectorSlweState(lam, r)
        self.mean = VectorMeanState(r)
        super().__init__(lam, config, policy, clamp_floor)
        self.threshold = self.config.multinomial_threshold(r)

    def _default_threshold(self) -> float:
        return DEFAULT_CHI2

    @property
    def estimate(self) -> list[float]:
        return self.mean.estimate

    def variances(self) -> list[float]:
        s = variance_factor(self.mean.count, self.lam)
        plug = self.schedule.plug_in
        return [plug(p) * s for p in self.mean.estimate]

    def test(self) -> TestOutcome | None:
        if variance_factor(self.mean.count, self.lam) == 0.0:
            return None
        return chi2_test(self.slwe.estimate, self.mean.estimate, self.variances(), self.threshold)

    def step(self, k: int) -> StepResult:
        self.step_index += 1
        self.slwe.update(k)
        self.mean.update(k)
        outcome = None
        if self._due():
            outcome = self.test()
            if outcome is not None and outcome.rejected:
                self.apply_jump(k)
        return StepResult(self.mean.estimate, outcome)

    def apply_jump(self, k: int) -> None:
        before = tuple(self.mean.estimate)
        mode = self.policy.mode
        slwe = self.slwe.estimate
        if mode is JumpMode.ADOPT:
            after = list(slwe)
        else:
            y = [0.0] * self.r
            y[k] = 1.0
            w = 1.0 if mode is JumpMode.RESET else 1.0 - self.policy.weight
            after = [(1.0 - w) * s + w * yi for s, yi in zip(slwe, y)]
        self.mean.estimate = after
        self.mean.count = self.restart_count
        self.jumps.append(JumpRecord(self.step_index, before, tuple(after)))

    def run(self, observations: Iterable[int]) -> Trace:
        obs = list(observations)
        n, r = len(obs), self.r
        jump = np.empty((n, r))
        slwe = np.empty((n, r))
        tested = np.zeros(n, dtype=bool)
        jumped = np.zeros(n, dtype=bool)
        n_jumps = len(self.jumps)
        for i, k in enumerate(obs):
            res = self.step(int(k))
            jump[i] = res.estimate
            slwe[i] = self.slwe.estimate
            if res.outcome is not None:
                tested[i] = True
                if len(self.jumps) != n_jumps:
                    jumped[i] = True
                    n_jumps = len(self.jumps)
        return Trace(jump, slwe, tested, jumped)

    def to_snapshot(self) -> dict:
        d = self._snapshot_common()
        d["r"] = self.r
        d["slwe"] = self.slwe.estimate
        d["mean"] = self.mean.estimate
        d["jumps"] = [[j.step, list(j.before), list(j.after)] for j in self.jumps]
        return d

    @classmethod
    def from_snapshot(cls, d: dict) -> MultinomialTracker:
        _check_snapshot(d, cls.kind)
        t = cls(int(d["r"]), lam=float(d["lambda"]), config=TestConfig.from_dict(d["config"]),
                policy=JumpPolicy.from_dict(d["policy"]), clamp_floor=float(d["clamp_floor"]))
        t.slwe.estimate = None if d["slwe"] is None else [float(v) for v in d["slwe"]]
        t.mean.estimate = [float(v) for v in d["mean"]]
        t.mean.count = int(d["m"])
        t.step_index = int(d["step"])
        t.jumps = [JumpRecord(int(s), tuple(map(float, b)), tuple(map(float, a)))
                   for s, b, a in d["jumps"]]
        return t

    @classmethod
    def load(cls, path: str | os.PathLike) -> MultinomialTracker:
        with open(path, encoding="utf-8") as fh:
            return cls.from_snapshot(json.load(fh))


def load_tracker(path: str | os.PathLike) -> BinomialTracker | MultinomialTracker:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") == MultinomialTracker.kind:
        return MultinomialTracker.from_snapshot(d)
    return BinomialTracker.from_snapshot(d)


def run_slwe(observations: Sequence[int], lam: float) -> np.ndarray:
    """Standalone scalar weak estimator trace."""
    s = SlweState(lam)
    return np.array([s.update(int(x)) for x in observations], dtype=float)


def run_mean(observations: Sequence[int]) -> np.ndarray:
    m = MeanState()
    return np.array([m.update(int(x)) for x in observations], dtype=float)


def run_vector_slwe(observations: Sequence[int], r: int, lam: float) -> np.ndarray:
    s = VectorSlweState(lam, r)
    return np.array([s.update(int(k)) for k in observations], dtype=float).reshape(-1, r)


def run_vector_mean(observations: Sequence[int], r: int) -> np.ndarray:
    m = VectorMeanState(r)
    return np.array([m.update(int(k)) for k in observations], dtype=float).reshape(-1, r)
