"""Command-line front end: ``slwejump {simulate,sweep,dist-check,track}``.

Every file written with ``--out`` gets a ``<out>.meta.json`` sidecar holding
the argument vector and the fully resolved configuration, enough to rerun
the command.  Exit status is 1 for invalid configuration and 2 when a run
produces NaN.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .detect import chi2_threshold, z_threshold
from .envs import EnvKind, Environment, generate
from .harness import EstimatorParams, SweepSpec, dist_check, run_sweep
from .tracker import (
    DEFAULT_CHI2,
    DEFAULT_Z,
    BinomialTracker,
    JumpMode,
    JumpPolicy,
    MultinomialTracker,
    load_tracker,
    run_mean,
    run_vector_mean,
)
from .text import (
    BUNDLED_TOPICS,
    KeywordLists,
    LabeledCorpus,
    bundled_corpus,
    cross_validate,
    pmi_keywords,
    track_and_score,
)

EXIT_CONFIG = 1
EXIT_NUMERIC = 2

SWEEP_PARAM_NAMES = {"z": "threshold", "chi2": "threshold", "threshold": "threshold",
                     "n-tilde": "n_tilde", "lambda": "lambda"}


class ConfigError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failure here
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# argument groups ---------------------------------------------------------------


def _add_threshold_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float, help="significance level; sets the threshold")
    g.add_argument("--z", type=float, help="explicit z threshold (Bernoulli streams)")
    g.add_argument("--chi2", type=float, help="explicit chi-squared threshold (multinomial streams)")


def _add_estimator_args(p: argparse.ArgumentParser, lam: float = 0.95) -> None:
    p.add_argument("--lambda", dest="lam", type=float, default=lam, help="SLWE forgetting factor")
    _add_threshold_args(p)
    p.add_argument("--n-tilde", type=int, default=None,
                   help="restart count after a jump (default: round(1/(1-lambda)))")
    p.add_argument("--test-every", type=int, default=10, help="test cadence in steps")
    p.add_argument("--warmup", type=int, default=2, help="minimum effective count before testing")
    p.add_argument("--policy", choices=[m.value for m in JumpMode], default=JumpMode.ADOPT.value)
    p.add_argument("--blend-weight", type=float, default=0.5,
                   help="weight on the SLWE estimate for --policy blend")


def _add_env_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", choices=[k.value for k in EnvKind], default=EnvKind.LARGE_JUMPS.value)
    p.add_argument("--shift-period", type=int, default=600)
    p.add_argument("--r", type=int, default=4, help="categories for multinomial environments")
    p.add_argument("--env-params", type=json.loads, default=None,
                   help="JSON object of further environment fields")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option defaults (keys are option names)")
    p.add_argument("--out", help="output path (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slwejump", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="per-step trace of the three estimators")
    _add_common(sim)
    _add_env_args(sim)
    _add_estimator_args(sim)
    sim.add_argument("--save-state", help="write the tracker snapshot here at the end")
    sim.add_argument("--resume", help="continue from a saved tracker snapshot")

    sw = sub.add_parser("sweep", help="MAE versus one parameter")
    _add_common(sw)
    _add_env_args(sw)
    _add_estimator_args(sw)
    sw.add_argument("--param", choices=sorted(SWEEP_PARAM_NAMES), default="z")
    sw.add_argument("--grid", default="1:6:0.25", help="start:stop:step (inclusive) or a,b,c")
    sw.add_argument("--reps", type=int, default=1)
    sw.add_argument("--workers", type=int, default=1)

    dc = sub.add_parser("dist-check", help="distribution of the estimator difference")
    _add_common(dc)
    dc.add_argument("--n", type=int, default=50)
    dc.add_argument("--p", type=float, default=0.3)
    dc.add_argument("--lambda", dest="lam", type=float, default=0.95)
    dc.add_argument("--reps", type=int, default=10_000)
    dc.add_argument("--bins", type=int, default=50)
    dc.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("track", help="keyword topic tracking on a labeled corpus")
    _add_common(tr)
    tr.add_argument("--corpus", help="JSON-lines corpus (default: bundled synthetic corpus)")
    tr.add_argument("--keywords", help="directory of per-topic keyword files")
    tr.add_argument("--topics", help="comma-separated topic order")
    tr.add_argument("--k", type=int, default=40, help="keywords per topic when selecting by PMI")
    tr.add_argument("--write-keywords", help="write the keyword lists used to this directory")
    tr.add_argument("--cv", action="store_true", help="two-fold cross-validation by article parity")
    tr.add_argument("--lambda", dest="lam", type=float, default=0.96)
    tr.add_argument("--chi2", type=float, default=30.0)
    tr.add_argument("--slwe-lambda", type=float, default=0.99)
    tr.add_argument("--n-tilde", type=int, default=None)
    tr.add_argument("--test-every", type=int, default=10)
    tr.add_argument("--warmup", type=int, default=2)
    tr.add_argument("--policy", choices=[m.value for m in JumpMode], default=JumpMode.ADOPT.value)
    tr.add_argument("--blend-weight", type=float, default=0.5)
    parser.subcommands = {"simulate": sim, "sweep": sw, "dist-check": dc, "track": tr}
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(defaults, dict):
            raise ConfigError("config file must hold a JSON object")
        sub = parser.subcommands[args.command]
        known = {a.dest: a for a in sub._actions}
        renamed = {}
        for key, value in defaults.items():
            dest = "lam" if key == "lambda" else key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise ConfigError(f"unknown config key {key!r}")
            renamed[dest] = value
        sub.set_defaults(**renamed)
        args = parser.parse_args(argv)
        given = [k for k in ("alpha", "z", "chi2") if getattr(args, k, None) is not None]
        if len(given) > 1 and args.command != "track":
            raise ConfigError(f"options {given} are mutually exclusive")
    return args


# resolution --------------------------------------------------------------------


def build_env(args: argparse.Namespace) -> Environment:
    extra = dict(args.env_params or {})
    for key in ("kind", "shift_period", "seed", "r"):
        if key in extra:
            raise ConfigError(f"set {key} with its own option, not --env-params")
    return Environment(kind=EnvKind(args.env), shift_period=args.shift_period, seed=args.seed,
                       r=args.r, **extra)


def resolve_threshold(args: argparse.Namespace, env: Environment) -> float:
    if env.multinomial:
        if args.z is not None:
            raise ConfigError("--z applies to Bernoulli environments; use --chi2")
        if args.chi2 is not None:
            return args.chi2
        return chi2_threshold(env.r, args.alpha) if args.alpha is not None else DEFAULT_CHI2
    if args.chi2 is not None:
        raise ConfigError("--chi2 applies to multinomial environments; use --z")
    if args.z is not None:
        return args.z
    return z_threshold(args.alpha) if args.alpha is not None else DEFAULT_Z


def build_params(args: argparse.Namespace, env: Environment) -> EstimatorParams:
    params = EstimatorParams(lam=args.lam, threshold=resolve_threshold(args, env),
                             n_tilde=args.n_tilde, cadence=args.test_every, warmup=args.warmup,
                             policy=JumpMode(args.policy), blend_weight=args.blend_weight)
    params.tracker(env)  # validates everything the tracker will check
    return params


def parse_grid(text: str) -> tuple[float, ...]:
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError("grid needs step > 0 and stop >= start")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 12) for i in range(count))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from exc


# output ------------------------------------------------------------------------


def _metadata(args: argparse.Namespace, argv: Sequence[str], config: dict) -> dict:
    return {"program": "slwejump", "version": __version__, "command": args.command,
            "argv": list(argv), "config": config}


def emit(text: str, path: str | None, meta: dict) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check_finite(name: str, values) -> None:
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise NumericError(f"NaN in {name}")


# subcommands -------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    env = build_env(args)
    params = build_params(args, env)
    steps = 5000 if args.steps is None else args.steps
    if steps < 1:
        raise ConfigError("--steps must be >= 1")
    if args.resume:
        try:
            tracker = load_tracker(args.resume)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot resume from {args.resume}: {exc}") from exc
        expected = MultinomialTracker if env.multinomial else BinomialTracker
        if not isinstance(tracker, expected):
            raise ConfigError("snapshot kind does not match the environment")
    else:
        tracker = params.tracker(env)
    start = tracker.step_index
    stream = generate(env, start + steps)
    obs = stream.observations[start:]
    truth = stream.truth[start:]
    trace = tracker.run(obs)
    if env.multinomial:
        mean = run_vector_mean(stream.observations, env.r)[start:]
    else:
        mean = run_mean(stream.observations)[start:]
    for name, arr in (("jump", trace.jump), ("slwe", trace.slwe), ("mean", mean)):
        _check_finite(name, arr)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if env.multinomial:
        r = env.r
        cols = lambda p: [f"{p}_{i + 1}" for i in range(r)]
        w.writerow(["step", *cols("truth"), "observation", *cols("jump"), *cols("slwe"),
                    *cols("mean"), "tested", "jumped"])
        for i in range(steps):
            w.writerow([start + i + 1, *map(repr, truth[i].tolist()), int(obs[i]),
                        *map(repr, trace.jump[i].tolist()), *map(repr, trace.slwe[i].tolist()),
                        *map(repr, mean[i].tolist()), int(trace.tested[i]), int(trace.jumped[i])])
    else:
        w.writerow(["step", "truth", "observation", "jump", "slwe", "mean", "tested", "jumped"])
        for i in range(steps):
            w.writerow([start + i + 1, repr(float(truth[i])), int(obs[i]), repr(float(trace.jump[i])),
                        repr(float(trace.slwe[i])), repr(float(mean[i])), int(trace.tested[i]),
                        int(trace.jumped[i])])
    if args.save_state:
        tracker.save(args.save_state)
    config = {"env": env.to_dict(), "estimator": params.to_dict(), "steps": steps,
              "start_step": start, "resume": args.resume, "save_state": args.save_state,
              "jumps": len(tracker.jumps)}
    emit(buf.getvalue(), args.out, _metadata(args, argv, config))
    return 0


def cmd_sweep(args: argparse.Namespace, argv: Sequence[str]) -> int:
    env = build_env(args)
    params = build_params(args, env)
    if args.param == "z" and env.multinomial:
        raise ConfigError("--param z applies to Bernoulli environments; use chi2")
    if args.param == "chi2" and not env.multinomial:
        raise ConfigError("--param chi2 applies to multinomial environments; use z")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    steps = 100_000 if args.steps is None else args.steps
    spec = SweepSpec(env, SWEEP_PARAM_NAMES[args.param], parse_grid(args.grid), length=steps,
                     reps=args.reps, base=params)
    report = run_sweep(spec, workers=args.workers)
    if report.has_nan():
        raise NumericError("NaN in sweep report")
    config = dict(report.metadata)
    config["param_flag"] = args.param
    emit(report.to_csv(), args.out, _metadata(args, argv, config))
    return 0


def cmd_dist_check(args: argparse.Namespace, argv: Sequence[str]) -> int:
    if args.reps < 2 or args.bins < 1 or args.n < 1:
        raise ConfigError("need --reps >= 2, --bins >= 1 and --n >= 1")
    check = dist_check(args.n, args.p, args.lam, reps=args.reps, seed=args.seed, bins=args.bins)
    summary = check.summary()
    _check_finite("moment summary", [v for v in summary.values() if isinstance(v, float)])
    config = {"n": args.n, "p": args.p, "lambda": args.lam, "reps": args.reps,
              "bins": args.bins, "seed": args.seed, "summary": summary}
    emit(check.histogram_csv(), args.out, _metadata(args, argv, config))
    if args.out is not None:
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _load_corpus(args: argparse.Namespace) -> LabeledCorpus:
    if args.corpus is None:
        return bundled_corpus()
    try:
        return LabeledCorpus.read_jsonl(args.corpus)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read corpus {args.corpus}: {exc}") from exc


def cmd_track(args: argparse.Namespace, argv: Sequence[str]) -> int:
    corpus = _load_corpus(args)
    if args.topics:
        topics = tuple(t.strip() for t in args.topics.split(",") if t.strip())
    elif args.corpus is None:
        topics = BUNDLED_TOPICS
    else:
        topics = tuple(corpus.labels())
    policy = JumpPolicy(JumpMode(args.policy), args.blend_weight, args.n_tilde)
    kwargs = dict(lam=args.lam, threshold=args.chi2, slwe_lam=args.slwe_lambda,
                  cadence=args.test_every, warmup=args.warmup, policy=policy)
    config = {"corpus": args.corpus or "bundled", "topics": list(topics), "k": args.k,
              "keywords": args.keywords, "cv": args.cv, **{k: v for k, v in kwargs.items()
                                                          if k != "policy"},
              "policy": policy.to_dict()}
    if args.cv:
        if args.keywords:
            raise ConfigError("--cv selects keywords per fold; drop --keywords")
        folds = cross_validate(corpus, args.k, topics, **kwargs)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "words", "mae_jump", "mae_slwe", "mae_mean", "skipped_articles", "jumps"])
        for i, res in enumerate(folds):
            _check_finite("fold MAE", [res.mae_jump, res.mae_slwe, res.mae_mean])
            w.writerow([i + 1, len(res.records), repr(res.mae_jump), repr(res.mae_slwe),
                        repr(res.mae_mean), res.skipped_articles, res.jumps])
        config["folds"] = [res.summary() for res in folds]
        emit(buf.getvalue(), args.out, _metadata(args, argv, config))
        return 0
    if args.keywords:
        try:
            lists = KeywordLists.from_dir(args.keywords, topics if args.topics else None)
        except OSError as exc:
            raise ConfigError(f"cannot read keyword lists: {exc}") from exc
    else:
        lists = pmi_keywords(corpus, args.k, topics)
    if args.write_keywords:
        lists.write_dir(args.write_keywords)
    res = track_and_score(corpus.articles, lists, **kwargs)
    _check_finite("tracking MAE", [res.mae_jump, res.mae_slwe, res.mae_mean])
    summary = res.summary()
    if res.skipped_articles:
        print(f"slwejump: skipped {res.skipped_articles} article(s) without keywords",
              file=sys.stderr)
    config["summary"] = summary
    emit(res.to_csv(), args.out, _metadata(args, argv, config))
    if args.out is not None:
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "dist-check": cmd_dist_check,
            "track": cmd_track}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:  # usage errors, --help, --version
            return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
        return COMMANDS[args.command](args, argv)
    except NumericError as exc:
        print(f"slwejump: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"slwejump: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokenPipeError:  # e.g. piped into head
        sys.stdout = None
        return 0
