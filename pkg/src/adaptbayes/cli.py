"""Command-line front end.

Every command writes one text artifact (to ``--out`` or stdout) that starts
with ``#`` comment lines naming the tool version, the resolved arguments and
the seed. Worker count and output location are left out of the header, so
identical runs give identical bytes whatever ``--threads`` is.

Exit status: 0 success, 2 usage error, 3 numeric failure, 4 degenerate
posterior.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .benchmark import (
    TIME_POINTS,
    bayes_risk,
    bound_L_k,
    bound_L_T,
    credible_run,
    design_histogram,
    prior_fisher_info,
    region_document,
    time_grid,
)
from .cem import CemConfig, cem_train, select_best
from .env import ENV_NAMES, EnvConfig, make_env, run_episode
from .errors import DegeneratePosterior, InvalidArgument, NumericFailure
from .heuristics import parse_heuristic
from .nn import save_model
from .parallel import default_threads

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_DEGENERATE = 4

# never recorded in output headers
_UNRECORDED = {"threads", "out", "config", "verbose", "func"}

log = logging.getLogger("adaptbayes")


class UsageError(Exception):
    pass


# argument parsing


def _common(p: argparse.ArgumentParser, env: bool = True) -> None:
    if env:
        p.add_argument("--env", choices=ENV_NAMES, help="estimation problem")
        p.add_argument("--particles", type=int, help="override the particle count")
        p.add_argument("--dead-time", type=float, help="sensor dead time added per experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    p.add_argument("--config", help="YAML file with option defaults; flags win")
    p.add_argument("-v", "--verbose", action="store_true")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="adaptbayes", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("train", help="train network heuristics with the cross-entropy method")
    _common(p)
    p.add_argument("--population", type=_positive, default=100)
    p.add_argument("--elites", type=_positive, default=10)
    p.add_argument("--iterations", type=_positive, default=1000)
    p.add_argument("--seeds", type=_positive, default=5, help="independent training runs")
    p.add_argument("--episodes-per-individual", type=_positive, default=1)
    p.add_argument("--eval-episodes", type=_positive, default=1000,
                   help="episodes used to pick the best run")
    p.set_defaults(func=cmd_train)
    subs["train"] = p

    p = sub.add_parser("evaluate", help="Bayes risk curve of a heuristic")
    _common(p)
    p.add_argument("--heuristic", help="exp-sparse | sigma-inv | pgh | nn:<path>")
    p.add_argument("--episodes", type=_positive, default=10_000)
    p.set_defaults(func=cmd_evaluate)
    subs["evaluate"] = p

    p = sub.add_parser("bounds", help="lower bounds on the Bayes risk")
    _common(p, env=False)
    p.add_argument("--kind", choices=["lk", "lt"], default="lk")
    p.add_argument("--kmax", type=int, default=20, help="largest experiment count (lk)")
    p.add_argument("--T", dest="T", type=float, default=100.0, help="largest total time (lt)")
    p.add_argument("--points", type=_positive, default=TIME_POINTS, help="time grid size (lt)")
    p.add_argument("--prior-k", type=float, default=30.0, help="prior edge sharpness (lt)")
    p.set_defaults(func=cmd_bounds)
    subs["bounds"] = p

    p = sub.add_parser("designs", help="histogram of chosen evolution times")
    _common(p)
    p.add_argument("--heuristic")
    p.add_argument("--episodes", type=_positive, default=10_000)
    p.add_argument("--bins", type=_positive, default=50)
    p.set_defaults(func=cmd_designs)
    subs["designs"] = p

    p = sub.add_parser("credible", help="credible regions for a pinned true parameter")
    _common(p)
    p.add_argument("--heuristic", action="append",
                   help="repeatable (default: exp-sparse, sigma-inv, pgh)")
    p.add_argument("--truth", help="comma-separated true parameter")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_credible)
    subs["credible"] = p

    p = sub.add_parser("episode", help="per-step trace of one episode")
    _common(p)
    p.add_argument("--heuristic")
    p.add_argument("--truth", help="comma-separated true parameter (default: drawn)")
    p.set_defaults(func=cmd_episode)
    subs["episode"] = p
    return parser, subs


def _load_config(path: str, allowed: set[str]) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a mapping of option names to values")
    out = {}
    for key, value in doc.items():
        dest = str(key).lstrip("-").replace("-", "_")
        if dest not in allowed:
            raise UsageError(f"config {path}: unknown option {key!r}")
        out[dest] = value
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = subs[args.command]
        allowed = set(vars(args)) - _UNRECORDED - {"command"}
        try:
            defaults = _load_config(args.config, allowed)
        except UsageError as exc:
            sub.error(str(exc))
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    needs_env = args.command != "bounds"
    if needs_env and args.env is None:
        subs[args.command].error("--env is required")
    if needs_env and args.env not in ENV_NAMES:
        subs[args.command].error(f"unknown environment {args.env!r}")
    if args.command in ("evaluate", "designs", "episode") and not args.heuristic:
        subs[args.command].error("--heuristic is required")
    if args.command == "train" and not args.out:
        subs[args.command].error("train needs --out for the model file")
    return args


# helpers


def header(args: argparse.Namespace, extra: list[str] | None = None) -> str:
    recorded = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    lines = [
        f"adaptbayes {__version__}",
        f"command: {args.command}",
        f"args: {json.dumps(recorded, sort_keys=True)}",
        f"seed: {args.seed}",
        *(extra or []),
    ]
    return "".join(f"# {line}\n" for line in lines)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from exc


def _env(args) -> EnvConfig:
    return make_env(args.env, particles=args.particles, dead_time=args.dead_time)


def _threads(args) -> int:
    return default_threads() if args.threads is None else max(1, args.threads)


def _heuristic(text: str):
    try:
        return parse_heuristic(text)
    except OSError as exc:
        raise UsageError(f"cannot load heuristic {text!r}: {exc}") from exc


def _truth(text: str | None, config: EnvConfig):
    if text is None:
        return None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--truth must be comma-separated numbers, got {text!r}") from None
    if len(values) != config.dim:
        raise UsageError(f"--truth needs {config.dim} values for {config.name}")
    return np.array(values)


# commands


def cmd_train(args) -> None:
    config = _env(args)
    cem_config = CemConfig(
        population=args.population, elites=args.elites, iterations=args.iterations,
        seeds_to_train=args.seeds, episodes_per_individual=args.episodes_per_individual,
    )
    threads = _threads(args)
    out = Path(args.out)
    models = []
    for j in range(cem_config.seeds_to_train):
        run_seed = args.seed + j
        log.info("training run %d/%d (seed %d)", j + 1, cem_config.seeds_to_train, run_seed)
        params, train_log = cem_train(config, cem_config, run_seed, threads)
        models.append(params)
        log_path = out.with_name(f"{out.stem}.train{j}.csv")
        _emit(train_log.to_csv(header(args, [f"run: {j} (seed {run_seed})"])), str(log_path))
    if len(models) == 1:
        best, risks = 0, []
    else:
        best, risks = select_best(models, config, args.eval_episodes, args.seed, threads)
    extra = [f"selected run: {best} of {len(models)}"]
    if risks:
        extra.append("selection risks: " + ", ".join(repr(r) for r in risks))
    save_model(out, models[best], config.observation_schema(), header=header(args, extra))


def cmd_evaluate(args) -> None:
    config = _env(args)
    spec = _heuristic(args.heuristic)
    curve = bayes_risk(config, spec, args.episodes, args.seed, _threads(args))
    axis = "experiment" if config.mode == "experiment_limited" else "time"
    _emit(curve.to_csv(header(args, [f"axis: {axis}"])), args.out)


def cmd_bounds(args) -> None:
    if args.kind == "lk":
        if args.kmax < 0:
            raise UsageError("--kmax must be >= 0")
        curve = bound_L_k(args.kmax)
        extra = ["bound: L_k = 2^(-2(k+1))/3"]
    else:
        if not args.T > 0:
            raise UsageError("--T must be positive")
        jp = prior_fisher_info(args.prior_k)
        curve = bound_L_T(time_grid(args.T, args.points), jp)
        extra = ["bound: L_T = 1/(T^2 + J_p)", f"prior information J_p: {jp!r}"]
    _emit(curve.to_csv(header(args, extra)), args.out)


def cmd_designs(args) -> None:
    config = _env(args)
    spec = _heuristic(args.heuristic)
    hist = design_histogram(config, spec, args.episodes, args.bins, args.seed, _threads(args))
    _emit(hist.to_csv(header(args)), args.out)


def cmd_credible(args) -> None:
    config = _env(args)
    specs = [_heuristic(h) for h in (args.heuristic or ["exp-sparse", "sigma-inv", "pgh"])]
    truth = _truth(args.truth, config)
    if truth is None:
        truth = (config.prior.lo + config.prior.hi) / 2
    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    docs = region_document(credible_run(config, specs, truth, args.level, args.seed))
    body = yaml.safe_dump({"environment": config.name, "regions": docs},
                          sort_keys=False, default_flow_style=None, width=100)
    _emit(header(args) + body, args.out)


def cmd_episode(args) -> None:
    config = _env(args)
    spec = _heuristic(args.heuristic)
    res = run_episode(config, spec, args.seed, truth=_truth(args.truth, config))
    lines = ["step,t,outcome,reward,traced_cov,time_used"]
    lines += [f"{r.step_index},{r.t!r},{r.outcome},{r.reward!r},{r.traced_cov_after!r},"
              f"{r.time_used_after!r}" for r in res.records]
    extra = ["truth: " + ", ".join(repr(float(v)) for v in res.truth)]
    _emit(header(args, extra) + "\n".join(lines) + "\n", args.out)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"adaptbayes {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegeneratePosterior as exc:
        print(f"adaptbayes {args.command}: degenerate posterior: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NumericFailure as exc:
        print(f"adaptbayes {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
