"""Streaming Bernoulli and multinomial parameter tracking with change-triggered jumps."""

__version__ = "0.1.0"

from .detect import (
    TestConfig,
    TestOutcome,
    chi2_quantile,
    chi2_test,
    chi2_threshold,
    normal_quantile,
    z_test,
    z_threshold,
)
from .envs import EnvKind, Environment, Stream, generate
from .estimators import (
    MeanState,
    SlweState,
    VarianceSchedule,
    VectorMeanState,
    VectorSlweState,
    diff_variance,
    effective_count,
    limiting_variance,
    variance_factor,
)
from .harness import EstimatorParams, SweepReport, SweepSpec, dist_check, run_sweep
from .tracker import BinomialTracker, JumpMode, JumpPolicy, MultinomialTracker, load_tracker

__all__ = [
    "BinomialTracker", "EnvKind", "Environment", "EstimatorParams", "JumpMode", "JumpPolicy",
    "MeanState", "MultinomialTracker", "SlweState", "Stream", "SweepReport", "SweepSpec",
    "TestConfig", "TestOutcome", "VarianceSchedule", "VectorMeanState", "VectorSlweState",
    "chi2_quantile", "chi2_test", "chi2_threshold", "diff_variance", "dist_check",
    "effective_count", "generate", "limiting_variance", "load_tracker", "normal_quantile",
    "run_sweep", "variance_factor", "z_test", "z_threshold",
]
