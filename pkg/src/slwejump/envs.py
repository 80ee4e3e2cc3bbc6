"""Seeded synthetic non-stationary environments and the samplers behind them.

All randomness flows through numpy's PCG64 bit generator.  An environment's
``seed`` together with a replication index feeds a ``SeedSequence``, which
spawns one child stream for the parameter trajectory and one for the
observations, so replications are independent and reproducible.

Steps are numbered from 1.  Piecewise-constant kinds change their parameter
after every ``shift_period`` steps, i.e. the first step with a new value is
``k * shift_period + 1``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class EnvKind(str, enum.Enum):
    LARGE_JUMPS = "large-jumps"
    SMALL_JUMPS = "small-jumps"
    COSINE = "cosine"
    SPIKE = "spike"
    DIRICHLET = "dirichlet"

    @property
    def multinomial(self) -> bool:
        return self in (EnvKind.SPIKE, EnvKind.DIRICHLET)


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_bernoulli(p: float, rng: np.random.Generator) -> int:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    return int(rng.random() < p)


def sample_multinomial(p: Sequence[float], rng: np.random.Generator) -> int:
    """Category index drawn by inverse CDF from a single uniform."""
    cdf = np.cumsum(np.asarray(p, dtype=float))
    if cdf.size < 2 or np.any(np.asarray(p) < 0) or abs(cdf[-1] - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector of length >= 2")
    return int(np.count_nonzero(cdf[:-1] <= rng.random()))


def sample_dirichlet(alphas: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    a = np.asarray(alphas, dtype=float)
    if a.size < 2 or np.any(a <= 0.0):
        raise ValueError("Dirichlet parameters must be positive, at least two of them")
    g = rng.standard_gamma(a)
    return g / g.sum()


@dataclass(frozen=True)
class Environment:
    """A synthetic regime.

    Only the fields relevant to ``kind`` are used.  The level sets for the two
    jump kinds and the cosine shape are stand-ins chosen to reproduce the
    qualitative regimes, not published trajectories.
    """

    kind: EnvKind = EnvKind.LARGE_JUMPS
    shift_period: int = 600
    seed: int = 0
    r: int = 4
    # large-jumps: next level drawn from `levels` at distance >= min_jump
    levels: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    min_jump: float = 0.3
    # small-jumps: reflected walk inside [band_low, band_high]
    band_low: float = 0.3
    band_high: float = 0.7
    min_step: float = 0.05
    max_step: float = 0.15
    # cosine: center + amplitude * cos(2 pi n / period)
    center: float = 0.5
    amplitude: float = 0.35
    period: int = 1200
    # spike: one category gets `peak`, the rest share 1 - peak
    peak: float = 0.8
    # dirichlet: symmetric concentration
    concentration: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EnvKind(self.kind))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        self.validate()

    def validate(self) -> None:
        if self.shift_period < 1:
            raise ValueError("shift_period must be >= 1")
        k = self.kind
        if k.multinomial and self.r < 2:
            raise ValueError("multinomial environments need r >= 2")
        if k is EnvKind.LARGE_JUMPS:
            if any(not 0.0 <= v <= 1.0 for v in self.levels):
                raise ValueError("levels must be probabilities")
            for v in self.levels:
                if not any(abs(u - v) >= self.min_jump - 1e-12 for u in self.levels):
                    raise ValueError(f"level {v} has no partner at distance >= {self.min_jump}")
        elif k is EnvKind.SMALL_JUMPS:
            if not 0.0 <= self.band_low < self.band_high <= 1.0:
                raise ValueError("need 0 <= band_low < band_high <= 1")
            if not 0.0 < self.min_step <= self.max_step:
                raise ValueError("need 0 < min_step <= max_step")
            if self.band_high - self.band_low < 2.0 * self.max_step:
                raise ValueError("band must be at least twice max_step wide")
        elif k is EnvKind.COSINE:
            if self.center - self.amplitude < 0.0 or self.center + self.amplitude > 1.0:
                raise ValueError("cosine range leaves [0, 1]")
            if self.period < 1:
                raise ValueError("cosine period must be >= 1")
        elif k is EnvKind.SPIKE:
            if not 0.0 <= self.peak <= 1.0:
                raise ValueError("peak must be a probability")
        elif k is EnvKind.DIRICHLET:
            if self.concentration <= 0.0:
                raise ValueError("concentration must be positive")

    @property
    def multinomial(self) -> bool:
        return self.kind.multinomial

    @property
    def dimension(self) -> int:
        return self.r if self.multinomial else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Environment:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown environment fields: {sorted(unknown)}")
        d = dict(d)
        if "levels" in d:
            d["levels"] = tuple(d["levels"])
        return cls(**d)


class StreamRecord(NamedTuple):
    step: int
    truth: float | tuple[float, ...]
    observation: int


@dataclass
class Stream:
    """A generated stream: ``truth`` is ``(n,)`` or ``(n, r)``; ``observations`` are ints."""

    env: Environment
    truth: np.ndarray
    observations: np.ndarray
    replication: int = 0
    change_steps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __len__(self) -> int:
        return len(self.observations)

    def records(self) -> Iterator[StreamRecord]:
        multi = self.truth.ndim == 2
        for i, (p, x) in enumerate(zip(self.truth, self.observations)):
            yield StreamRecord(i + 1, tuple(float(v) for v in p) if multi else float(p), int(x))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        multi = self.truth.ndim == 2
        if multi:
            w.writerow(["step", *[f"truth_{i + 1}" for i in range(self.truth.shape[1])], "observation"])
        else:
            w.writerow(["step", "truth", "observation"])
        for rec in self.records():
            truth = [repr(v) for v in rec.truth] if multi else [repr(rec.truth)]
            w.writerow([rec.step, *truth, rec.observation])
        return buf.getvalue()


def _segment_levels(env: Environment, n_segments: int, rng: np.random.Generator) -> np.ndarray:
    kind = env.kind
    if kind is EnvKind.LARGE_JUMPS:
        levels = np.array(env.levels)
        out = np.empty(n_segments)
        cur = levels[rng.integers(len(levels))]
        for s in range(n_segments):
            if s:
                choices = levels[np.abs(levels - cur) >= env.min_jump - 1e-12]
                cur = choices[rng.integers(len(choices))]
            out[s] = cur
        return out
    if kind is EnvKind.SMALL_JUMPS:
        out = np.empty(n_segments)
        cur = rng.uniform(env.band_low, env.band_high)
        for s in range(n_segments):
            if s:
                step = rng.uniform(env.min_step, env.max_step)
                sign = 1.0 if rng.random() < 0.5 else -1.0
                nxt = cur + sign * step
                if not env.band_low <= nxt <= env.band_high:
                    nxt = cur - sign * step
                cur = nxt
            out[s] = cur
        return out
    if kind is EnvKind.SPIKE:
        r = env.r
        out = np.full((n_segments, r), (1.0 - env.peak) / (r - 1))
        spikes = rng.integers(r, size=n_segments)
        out[np.arange(n_segments), spikes] = env.peak
        return out
    if kind is EnvKind.DIRICHLET:
        alphas = np.full(env.r, env.concentration)
        return np.array([sample_dirichlet(alphas, rng) for _ in range(n_segments)])
    raise ValueError(f"{kind} is not piecewise constant")


def truth_path(env: Environment, length: int, replication: int = 0) -> np.ndarray:
    """True parameter at steps ``1..length``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    trajectory_seq, _ = _seeds(env, replication)
    if env.kind is EnvKind.COSINE:
        n = np.arange(1, length + 1)
        return env.center + env.amplitude * np.cos(2.0 * math.pi * n / env.period)
    n_segments = -(-length // env.shift_period)
    levels = _segment_levels(env, n_segments, make_rng(trajectory_seq))
    return np.repeat(levels, env.shift_period, axis=0)[:length]


def _seeds(env: Environment, replication: int) -> list[np.random.SeedSequence]:
    root = np.random.SeedSequence(env.seed, spawn_key=(replication,))
    return root.spawn(2)


def generate(env: Environment, length: int, replication: int = 0) -> Stream:
    """Truth trajectory and i.i.d. observations drawn from it."""
    truth = truth_path(env, length, replication)
    _, obs_seq = _seeds(env, replication)
    u = make_rng(obs_seq).random(length)
    if truth.ndim == 2:
        cdf = np.cumsum(truth, axis=1)
        obs = np.count_nonzero(cdf[:, :-1] <= u[:, None], axis=1).astype(np.int64)
    else:
        obs = (u < truth).astype(np.int64)
    if env.kind is EnvKind.COSINE:
        changes = np.empty(0, dtype=int)
    else:
        changes = np.arange(env.shift_period + 1, length + 1, env.shift_period)
    return Stream(env, truth, obs, replication, changes)
