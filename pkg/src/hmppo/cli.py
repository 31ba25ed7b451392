"""Command line entry point: ``hmppo <subcommand> [--config FILE] [--seed N] [--out-dir DIR] [--method NAME]``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .scenario import ConfigError, Scenario, desk_scenario, load_scenario, scenario_from_dict
from .traffic import CdrParseError, TrafficConfigError

logger = logging.getLogger("hmppo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


@dataclass
class RunConfig:
    scenario: Scenario
    train: dict[str, Any] = field(default_factory=dict)
    dqn: dict[str, Any] = field(default_factory=dict)
    evaluation: dict[str, Any] = field(default_factory=dict)


def _resolve_scenario(value: Any, base: Path) -> Scenario:
    if value is None or value == "desk":
        return desk_scenario()
    if isinstance(value, dict):
        return scenario_from_dict(value)
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"scenario file {path} not found")
        return load_scenario(path)
    raise ConfigError(f"scenario must be 'desk', a path or a mapping, got {type(value).__name__}")


def load_run_config(path: str | Path | None) -> RunConfig:
    """Read the experiment file; every section is optional."""
    if path is None:
        return RunConfig(desk_scenario())
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    # a bare scenario file is also accepted
    if "slices" in raw:
        return RunConfig(scenario_from_dict(raw))
    unknown = set(raw) - {"scenario", "train", "dqn", "evaluation"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    sections = {k: raw.get(k) or {} for k in ("train", "dqn", "evaluation")}
    for k, v in sections.items():
        if not isinstance(v, dict):
            raise ConfigError(f"{path}: section {k!r} must be a mapping")
    return RunConfig(_resolve_scenario(raw.get("scenario"), path.parent), **sections)


def _checkpoint_path(out_dir: Path, method: str) -> Path:
    return out_dir / "checkpoints" / f"{method}.ckpt"


def _experiment(rc: RunConfig, args: argparse.Namespace):
    from .evaluate import METHODS, ExperimentConfig

    ev = dict(rc.evaluation)
    out_dir = Path(args.out_dir)
    methods = tuple(ev.pop("methods", METHODS))
    if args.method:
        methods = (args.method,)
    checkpoints = {m: str(_checkpoint_path(out_dir, m)) for m in methods}
    checkpoints.update(ev.pop("checkpoints", {}) or {})
    if getattr(args, "checkpoint", None) and len(methods) == 1:
        checkpoints[methods[0]] = args.checkpoint
    if args.seed is not None:
        ev["seeds"] = (args.seed,)
    for key in ("loads", "seeds", "high_load_window", "utilization_loads"):
        if key in ev:
            ev[key] = tuple(ev[key])
    try:
        return ExperimentConfig(scenario=rc.scenario, methods=methods, out_dir=str(out_dir),
                                checkpoints=checkpoints, **ev)
    except TypeError as exc:
        raise ConfigError(f"evaluation section: {exc}") from exc


# ------------------------------------------------------------- commands
def cmd_train(rc: RunConfig, args: argparse.Namespace) -> int:
    from .trainer import TrainConfig, train, train_dqn

    method = args.method or "hmppo"
    out_dir = Path(args.out_dir)
    overrides = dict(rc.train)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    for key in ("train_loads", "patterns"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    try:
        cfg = TrainConfig.for_method(method, **overrides)
    except TypeError as exc:
        raise ConfigError(f"train section: {exc}") from exc
    ckpt = _checkpoint_path(out_dir, method)
    log = lambda rec: logger.info(json.dumps(rec, sort_keys=True))  # noqa: E731
    if method == "dqn":
        from .baselines import DQNConfig

        try:
            dcfg = DQNConfig(**{"seed": cfg.seed, **rc.dqn})
        except TypeError as exc:
            raise ConfigError(f"dqn section: {exc}") from exc
        train_dqn(rc.scenario, dcfg, cfg, checkpoint=ckpt, log=log)
    elif method in ("hmppo", "standard_ppo"):
        metrics = out_dir / "metrics" / f"{method}.jsonl"
        metrics.parent.mkdir(parents=True, exist_ok=True)
        if metrics.exists():
            metrics.unlink()
        train(rc.scenario, cfg, method, checkpoint=ckpt, metrics_path=metrics, log=log)
    else:
        raise ConfigError(f"{method} is not a trainable method (hmppo, standard_ppo, dqn)")
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def cmd_evaluate(rc: RunConfig, args: argparse.Namespace) -> int:
    from .evaluate import evaluate, make_allocator

    if not args.method:
        raise ConfigError("evaluate needs --method")
    exp = _experiment(rc, args)
    method = exp.methods[0]
    alloc = make_allocator(method, exp.scenario, exp.checkpoints.get(method))
    run = evaluate(alloc, exp.scenario, args.load, exp.seeds, exp.pattern)
    summary = run.summary()
    summary.update({"load": args.load, "seeds": list(exp.seeds), "pattern": exp.pattern,
                    "satisfaction_per_seed": [float(x) for x in run.satisfaction_per_episode()]})
    out = Path(exp.out_dir) / f"evaluate_{method}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(rc: RunConfig, args: argparse.Namespace) -> int:
    from .evaluate import load_sweep, plot_results

    exp = _experiment(rc, args)
    result = load_sweep(exp)
    plot_results(exp.out_dir)
    for name, pts in result["curves"].items():
        print(name, " ".join(f"{p['load']:.1f}:{p['mean']:.3f}" for p in pts))
    return EXIT_OK


def cmd_trace(rc: RunConfig, args: argparse.Namespace) -> int:
    from .evaluate import plot_results, throughput_trace

    exp = _experiment(rc, args)
    result = throughput_trace(exp)
    plot_results(exp.out_dir)
    for name, ys in result["series"].items():
        print(f"{name}: mean throughput {sum(ys) / len(ys) / 1e6:.2f} Mbit/s")
    return EXIT_OK


def cmd_utilization(rc: RunConfig, args: argparse.Namespace) -> int:
    from .evaluate import format_utilization_table, utilization_table

    exp = _experiment(rc, args)
    rows = utilization_table(exp, args.method or "hmppo")
    print(format_utilization_table(rows), end="")
    return EXIT_OK


def cmd_plot(rc: RunConfig, args: argparse.Namespace) -> int:
    from .evaluate import plot_results

    written = plot_results(args.out_dir)
    if not written:
        raise ConfigError(f"no result files found in {args.out_dir}")
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-load": cmd_sweep,
    "trace": cmd_trace,
    "report-utilization": cmd_utilization,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML (defaults to the built-in desk scenario)")
    common.add_argument("--seed", type=int, default=None, help="overrides the training seed / evaluation seeds")
    common.add_argument("--out-dir", default="results", help="where checkpoints and results go")
    common.add_argument("--method", default=None, help="hmppo, standard_ppo, dqn, greedy or static")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="hmppo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train a learned method and write a checkpoint")
    p.add_argument("--steps", type=int, default=None, help="environment steps (overrides the config)")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate one method at one load level")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--load", type=float, default=0.8)
    sub.add_parser("sweep-load", parents=[common], help="satisfaction versus traffic load for each method")
    sub.add_parser("trace", parents=[common], help="throughput over time on a shared traffic trace")
    sub.add_parser("report-utilization", parents=[common], help="per-slot resource utilization table")
    sub.add_parser("plot", parents=[common], help="render images from result files")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .evaluate import MissingCheckpointError
    from .trainer import CheckpointError

    try:
        rc = load_run_config(args.config)
        return COMMANDS[args.command](rc, args)
    except (ConfigError, TrafficConfigError, CdrParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingCheckpointError, CheckpointError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
