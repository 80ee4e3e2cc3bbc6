"""Experiment driver: MAE metric, parameter sweeps, distribution and calibration checks."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detect import TestConfig, chi2_test, normal_cdf, z_test
from .envs import Environment, Stream, generate, make_rng
from .estimators import CLAMP_FLOOR, VarianceSchedule, diff_variance, variance_factor
from .tracker import (
    DEFAULT_CHI2,
    DEFAULT_Z,
    BinomialTracker,
    JumpMode,
    JumpPolicy,
    MultinomialTracker,
    Trace,
    run_mean,
    run_slwe,
    run_vector_mean,
    run_vector_slwe,
)

ESTIMATORS = ("jump", "slwe", "mean")
SWEEP_PARAMS = ("threshold", "n_tilde", "lambda")
# batches used for a within-stream standard error when there is one replication
N_BATCHES = 20


def mae(estimates, truth) -> float:
    """Mean absolute error over steps; vectors are averaged over components first."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    if est.size == 0:
        raise ValueError("empty sequences")
    return float(np.mean(np.abs(est - tru)))


def abs_errors(estimates: np.ndarray, truth: np.ndarray) -> np.ndarray:
    err = np.abs(np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float))
    return err.mean(axis=1) if err.ndim == 2 else err


def batch_stderr(per_step: np.ndarray, n_batches: int = N_BATCHES) -> float:
    """Standard error of the time average from contiguous batch means."""
    usable = len(per_step) // n_batches * n_batches
    if usable < n_batches:
        return float("nan")
    means = per_step[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


@dataclass(frozen=True)
class EstimatorParams:
    lam: float = 0.95
    threshold: float | None = None
    n_tilde: int | None = None
    cadence: int = 10
    warmup: int = 2
    policy: JumpMode = JumpMode.ADOPT
    blend_weight: float = 0.5

    def tracker(self, env: Environment) -> BinomialTracker | MultinomialTracker:
        policy = JumpPolicy(self.policy, self.blend_weight, self.n_tilde)
        if env.multinomial:
            thr = DEFAULT_CHI2 if self.threshold is None else self.threshold
            cfg = TestConfig(threshold=thr, cadence=self.cadence, warmup=self.warmup)
            return MultinomialTracker(env.r, self.lam, cfg, policy)
        thr = DEFAULT_Z if self.threshold is None else self.threshold
        cfg = TestConfig(threshold=thr, cadence=self.cadence, warmup=self.warmup)
        return BinomialTracker(self.lam, cfg, policy)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "threshold": self.threshold, "n_tilde": self.n_tilde,
                "cadence": self.cadence, "warmup": self.warmup, "policy": self.policy.value,
                "blend_weight": self.blend_weight}


def run_estimators(stream: Stream, params: EstimatorParams,
                   estimators: Sequence[str] = ESTIMATORS) -> dict[str, np.ndarray]:
    """Per-step estimates of each requested estimator on one stream."""
    out: dict[str, np.ndarray] = {}
    env = stream.env
    obs = stream.observations
    trace: Trace | None = None
    if "jump" in estimators:
        trace = params.tracker(env).run(obs)
        out["jump"] = trace.jump
    if "slwe" in estimators:
        if trace is not None:
            out["slwe"] = trace.slwe
        elif env.multinomial:
            out["slwe"] = run_vector_slwe(obs, env.r, params.lam)
        else:
            out["slwe"] = run_slwe(obs, params.lam)
    if "mean" in estimators:
        out["mean"] = run_vector_mean(obs, env.r) if env.multinomial else run_mean(obs)
    return out


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: a single swept parameter over ``grid`` for each estimator."""

    env: Environment
    param: str
    grid: tuple[float, ...]
    length: int = 100_000
    reps: int = 1
    estimators: tuple[str, ...] = ESTIMATORS
    base: EstimatorParams = field(default_factory=EstimatorParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"param must be one of {SWEEP_PARAMS}, got {self.param!r}")
        if not self.grid:
            raise ValueError("grid must be nonempty")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ValueError(f"unknown estimators {sorted(bad)}")
        if self.length < 10 * self.env.shift_period:
            raise ValueError("stream length must be at least 10 shift periods")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        for g in self.grid:
            self.params_at(g)

    def params_at(self, value: float) -> EstimatorParams:
        b = self.base
        if self.param == "threshold":
            if value < 0:
                raise ValueError("thresholds must be nonnegative")
            return EstimatorParams(b.lam, value, b.n_tilde, b.cadence, b.warmup, b.policy, b.blend_weight)
        if self.param == "n_tilde":
            if value < 1 or value != int(value):
                raise ValueError("n_tilde grid values must be integers >= 1")
            return EstimatorParams(b.lam, b.threshold, int(value), b.cadence, b.warmup, b.policy,
                                   b.blend_weight)
        if not 0.0 < value < 1.0:
            raise ValueError("lambda grid values must lie in (0, 1)")
        return EstimatorParams(value, b.threshold, b.n_tilde, b.cadence, b.warmup, b.policy,
                               b.blend_weight)

    def to_dict(self) -> dict:
        return {"env": self.env.to_dict(), "param": self.param, "grid": list(self.grid),
                "length": self.length, "reps": self.reps, "estimators": list(self.estimators),
                "base": self.base.to_dict()}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class SweepRow:
    param: float
    estimator: str
    mae: float
    stderr: float
    reps: int
    seed: int


@dataclass
class SweepReport:
    rows: list[SweepRow]
    metadata: dict

    def lookup(self, estimator: str, param: float) -> SweepRow:
        for row in self.rows:
            if row.estimator == estimator and row.param == param:
                return row
        raise KeyError((estimator, param))

    def curve(self, estimator: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r.estimator == estimator]
        return np.array([r.param for r in rows]), np.array([r.mae for r in rows])

    def has_nan(self) -> bool:
        return any(math.isnan(r.mae) or math.isnan(r.stderr) for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param", "estimator", "mae", "stderr", "reps", "seed"])
        for r in self.rows:
            w.writerow([repr(r.param), r.estimator, repr(r.mae), repr(r.stderr), r.reps, r.seed])
        return buf.getvalue()


def _one_replication(spec: SweepSpec, rep: int) -> dict[tuple[float, str], tuple[float, np.ndarray]]:
    stream = generate(spec.env, spec.length, replication=rep)
    # the mean never depends on the swept value, the weak estimator only on lambda
    fixed = ("mean",) if spec.param == "lambda" else ("slwe", "mean")
    shared = run_estimators(stream, spec.base, [e for e in fixed if e in spec.estimators])
    varying = [e for e in spec.estimators if e not in shared]
    results: dict[tuple[float, str], tuple[float, np.ndarray]] = {}
    for g in spec.grid:
        est = run_estimators(stream, spec.params_at(g), varying) if varying else {}
        est.update(shared)
        for name in spec.estimators:
            err = abs_errors(est[name], stream.truth)
            results[(g, name)] = (float(err.mean()), err)
    return results


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepReport:
    """Simulate every grid point and estimator; deterministic given the spec."""
    reps = range(spec.reps)
    if workers > 1 and spec.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_one_replication, [spec] * spec.reps, reps))
    else:
        per_rep = [_one_replication(spec, rep) for rep in reps]
    rows = []
    for g in spec.grid:
        for name in spec.estimators:
            maes = np.array([res[(g, name)][0] for res in per_rep])
            if spec.reps > 1:
                se = float(maes.std(ddof=1) / math.sqrt(spec.reps))
            else:
                se = batch_stderr(per_rep[0][(g, name)][1])
            rows.append(SweepRow(g, name, float(maes.mean()), se, spec.reps, spec.env.seed))
    meta = {"spec": spec.to_dict(), "config_hash": spec.config_hash(), "seed": spec.env.seed}
    return SweepReport(rows, meta)


# distribution of the estimator difference ---------------------------------------


def _skewness(x: np.ndarray) -> float:
    c = x - x.mean()
    return float(np.mean(c ** 3) / np.mean(c ** 2) ** 1.5)


_vec_normal_cdf = np.frompyfunc(normal_cdf, 1, 1)


@dataclass
class DistCheck:
    n: int
    p: float
    lam: float
    reps: int
    seed: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    theory_variance: float
    mean_se: float
    variance_se: float
    skewness_se: float
    ks_distance: float
    bin_edges: np.ndarray
    counts: np.ndarray
    normal_counts: np.ndarray

    @property
    def mean_ok(self) -> bool:
        return abs(self.mean) <= 3.0 * self.mean_se

    @property
    def variance_ok(self) -> bool:
        return abs(self.variance - self.theory_variance) <= 3.0 * self.variance_se

    def summary(self) -> dict:
        return {
            "n": self.n, "p": self.p, "lambda": self.lam, "reps": self.reps, "seed": self.seed,
            "mean": self.mean, "mean_se": self.mean_se, "mean_ok": self.mean_ok,
            "variance": self.variance, "theory_variance": self.theory_variance,
            "variance_se": self.variance_se, "variance_ok": self.variance_ok,
            "skewness": self.skewness, "skewness_se": self.skewness_se,
            "excess_kurtosis": self.excess_kurtosis, "ks_distance": self.ks_distance,
        }

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count", "normal_expected"])
        for lo, hi, c, e in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts, self.normal_counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(e))])
        return buf.getvalue()


def simulate_differences(n: int, p: float, lam: float, reps: int,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Final weak-estimator and sample-mean values of ``reps`` streams of length ``n``."""
    rng = make_rng(np.random.SeedSequence(seed))
    slwe = mean = None
    for t in range(1, n + 1):
        x = (rng.random(reps) < p).astype(float)
        if t == 1:
            slwe = x.copy()
            mean = x.copy()
        else:
            slwe = lam * slwe + (1.0 - lam) * x
            mean = ((t - 1) / t) * mean + (1 / t) * x
    return slwe, mean


def dist_check(n: int, p: float, lam: float, reps: int = 10_000, seed: int = 0,
               bins: int = 50) -> DistCheck:
    """Monte Carlo distribution of ``slwe_n - mean_n`` against its normal approximation."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if reps < 100:
        raise ValueError("need at least 100 replications")
    slwe, mean = simulate_differences(n, p, lam, reps, seed)
    d = slwe - mean
    mu = float(d.mean())
    c = d - mu
    m2 = float(np.mean(c ** 2))
    m4 = float(np.mean(c ** 4))
    var = float(d.var(ddof=1))
    theory = diff_variance(n, lam, p)
    sd = math.sqrt(theory)
    edges = np.histogram_bin_edges(d, bins=bins)
    counts, _ = np.histogram(d, bins=edges)
    if sd > 0:
        cdf_edges = np.array(_vec_normal_cdf(edges / sd), dtype=float)
        normal_counts = reps * np.diff(cdf_edges)
        srt = np.sort(d)
        cdf = np.array(_vec_normal_cdf(srt / sd), dtype=float)
        ecdf_hi = np.arange(1, reps + 1) / reps
        ks = float(max(np.max(ecdf_hi - cdf), np.max(cdf - (ecdf_hi - 1.0 / reps))))
    else:
        normal_counts = np.zeros(len(counts))
        ks = float("nan")
    return DistCheck(
        n=n, p=p, lam=lam, reps=reps, seed=seed, mean=mu, variance=var,
        skewness=_skewness(d) if m2 > 0 else 0.0,
        excess_kurtosis=m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0,
        theory_variance=theory,
        mean_se=math.sqrt(var / reps),
        variance_se=math.sqrt(max(m4 - m2 * m2, 0.0) / reps),
        skewness_se=math.sqrt(6.0 * (reps - 2) / ((reps + 1) * (reps + 3))),
        ks_distance=ks, bin_edges=edges, counts=counts, normal_counts=normal_counts,
    )


def slwe_variance(n: int, p: float, lam: float, reps: int, seed: int = 0) -> tuple[float, float]:
    """Empirical variance (and its standard error) of the weak estimator after ``n`` steps."""
    rng = make_rng(np.random.SeedSequence(seed))
    est = None
    for t in range(1, n + 1):
        x = (rng.random(reps) < p).astype(float)
        est = x if t == 1 else lam * est + (1.0 - lam) * x
    c = est - est.mean()
    m2 = float(np.mean(c ** 2))
    m4 = float(np.mean(c ** 4))
    return float(est.var(ddof=1)), math.sqrt(max(m4 - m2 * m2, 0.0) / reps)


# type-I calibration ------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    rejections: int
    streams: int
    alpha: float

    @property
    def rate(self) -> float:
        return self.rejections / self.streams


def binomial_calibration(p: float, lam: float, n: int, threshold: float, streams: int,
                         alpha: float, seed: int = 0) -> Calibration:
    """Single-shot z-tests at step ``n`` on stationary streams, plug-in from the mean."""
    slwe, mean = simulate_differences(n, p, lam, streams, seed)
    schedule = VarianceSchedule(lam, CLAMP_FLOOR)
    hits = 0
    for a, b in zip(slwe.tolist(), mean.tolist()):
        if z_test(a, b, schedule(n, b), threshold).rejected:
            hits += 1
    return Calibration(hits, streams, alpha)


def multinomial_calibration(p: Sequence[float], lam: float, n: int, threshold: float,
                            streams: int, alpha: float, seed: int = 0) -> Calibration:
    """Single-shot chi-squared tests at step ``n`` on stationary multinomial streams."""
    probs = np.asarray(p, dtype=float)
    r = probs.size
    cdf = np.cumsum(probs)
    rng = make_rng(np.random.SeedSequence(seed))
    rows = np.arange(streams)
    slwe = np.zeros((streams, r))
    mean = np.zeros((streams, r))
    for t in range(1, n + 1):
        k = np.count_nonzero(cdf[:-1][None, :] <= rng.random(streams)[:, None], axis=1)
        y = np.zeros((streams, r))
        y[rows, k] = 1.0
        if t == 1:
            slwe = y.copy()
            mean = y.copy()
        else:
            slwe = lam * slwe + (1.0 - lam) * y
            mean = ((t - 1) / t) * mean + (1 / t) * y
    s = variance_factor(n, lam)
    hits = 0
    for a, b in zip(slwe.tolist(), mean.tolist()):
        var = [max(q * (1.0 - q), CLAMP_FLOOR) * s for q in b]
        if chi2_test(a, b, var, threshold).rejected:
            hits += 1
    return Calibration(hits, streams, alpha)


# detection delay ---------------------------------------------------------------


def detection_delays(stream: Stream, jump_steps: Sequence[int]) -> np.ndarray:
    """Steps from each true change to the first jump inside the new segment (inf if none)."""
    jumps = np.asarray(sorted(jump_steps), dtype=float)
    changes = stream.change_steps
    ends = np.append(changes[1:], len(stream) + 1)
    delays = np.full(len(changes), np.inf)
    for i, (c, e) in enumerate(zip(changes, ends)):
        j = np.searchsorted(jumps, c)
        if j < len(jumps) and jumps[j] < e:
            delays[i] = jumps[j] - c
    return delays
