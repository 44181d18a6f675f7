"""Command-line interface.

Subcommands: run (execute a strategy over a benchmark with checkpointing),
sweep (grid over k/q/t), report (rebuild reports from records), replay
(re-execute a cached run without network traffic), validate-data (schema
check a dataset file). Exit codes: 0 success, 1 runtime failure, 2 usage.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable

from .backends import VerifierBackend
from .config import AppConfig, ConfigError
from .core import StepSolution
from .datasets import (
    SchemaError,
    build_mathcheck_star,
    load_adapter,
    load_canonical,
    load_processbench,
    load_prm800k,
)
from .evaluation import write_sweep_csv, sweep as run_sweep
from .prompts import PromptTemplates
from .runner import (
    CACHE_DIR_NAME,
    CachingBackend,
    ManifestError,
    execute_run,
    load_manifest,
    write_reports,
)
from .strategies import StrategyKind

logger = logging.getLogger(__name__)

_STRATEGIES = {kind.value: kind for kind in StrategyKind}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepverify",
        description="Locate the first erroneous step in math solutions with verifier agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one strategy over a benchmark")
    _add_common_flags(run_p)
    run_p.add_argument("--stop-after", type=int, default=None, metavar="N",
                       help="checkpoint and exit after N problems (testing/operations aid)")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="grid over k/q/t on one strategy")
    _add_common_flags(sweep_p)
    sweep_p.add_argument("--q-grid", default=None, metavar="LIST",
                         help="comma-separated q values, e.g. 0,1,2,3")
    sweep_p.add_argument("--t-grid", default=None, metavar="LIST")
    sweep_p.add_argument("--k-grid", default=None, metavar="LIST")
    sweep_p.set_defaults(func=cmd_sweep)

    report_p = sub.add_parser("report", help="rebuild reports from run records")
    report_p.add_argument("--run", required=True, help="run directory")
    report_p.set_defaults(func=cmd_report)

    replay_p = sub.add_parser("replay", help="re-execute a cached run offline")
    replay_p.add_argument("--run", required=True, help="original run directory")
    replay_p.add_argument("--out", default=None, help="where to write the replay (default: RUN/replay)")
    replay_p.set_defaults(func=cmd_replay)

    validate_p = sub.add_parser("validate-data", help="schema-check a dataset file")
    validate_p.add_argument("--kind", required=True,
                            choices=["processbench", "mathcheck-star", "prm800k", "canonical"])
    validate_p.add_argument("--path", required=True)
    validate_p.add_argument("--processbench-path", default=None,
                            help="complement file for mathcheck-star")
    validate_p.add_argument("--adapter", default=None, help="adapter mapping file")
    validate_p.set_defaults(func=cmd_validate)

    return parser


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", required=True, help="config file (INI sections)")
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--strategy", choices=sorted(_STRATEGIES), default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--q", type=int, default=None)
    parser.add_argument("--t", type=int, default=None)
    parser.add_argument("--limit", type=int, default=None,
                        help="use only the first N problems")
    parser.add_argument("--concurrency", type=int, default=None,
                        help="global in-flight call cap")
    parser.add_argument("--model", default=None, help="override backend model name")
    parser.add_argument("--cache", action="store_true",
                        help="reuse cached responses and record new ones")
    parser.add_argument("--trace", action="store_true",
                        help="log request/response JSON verbatim")
    parser.add_argument("--templates", default=None,
                        help="directory overriding the built-in prompt templates")


def _resolve(args: argparse.Namespace) -> tuple[AppConfig, StrategyKind]:
    config = AppConfig.load(args.config)
    if args.k is not None:
        config.engine.k = args.k
    if args.q is not None:
        config.engine.q = args.q
    if args.t is not None:
        config.engine.t = args.t
    if args.limit is not None:
        config.dataset.limit = args.limit
    if args.concurrency is not None:
        config.engine.concurrency = args.concurrency
    if args.model is not None:
        config.backend.model = args.model
    strategy = _STRATEGIES[args.strategy] if args.strategy else StrategyKind.TEMPORAL
    return config, strategy


def _make_factory(
    config: AppConfig, args: argparse.Namespace, run_dir: Path
) -> Callable[[StepSolution], VerifierBackend]:
    factory = config.backend_factory(trace=args.trace)
    if getattr(args, "cache", False):
        cache_dir = run_dir / CACHE_DIR_NAME

        def cached(problem: StepSolution) -> VerifierBackend:
            return CachingBackend(factory(problem), cache_dir)

        return cached
    return factory


def _snapshot(config: AppConfig, args: argparse.Namespace, strategy: StrategyKind) -> dict[str, Any]:
    snapshot = config.to_dict()
    snapshot["strategy"] = strategy.value
    snapshot["cache"] = bool(getattr(args, "cache", False))
    snapshot["templates_dir"] = args.templates or ""
    return snapshot


def cmd_run(args: argparse.Namespace) -> int:
    config, strategy = _resolve(args)
    if args.trace:
        logging.basicConfig(level=logging.INFO)
    run_dir = Path(args.out)
    benchmark = config.load_benchmark()
    templates = PromptTemplates.load(args.templates) if args.templates else None
    manifest = execute_run(
        benchmark,
        _make_factory(config, args, run_dir),
        strategy,
        config.engine_config(),
        run_dir,
        backend_info={"kind": config.backend.kind, "model": config.backend.model},
        config_snapshot=_snapshot(config, args, strategy),
        templates=templates,
        price=config.price_for(config.backend.model),
        concurrency=config.engine.concurrency,
        stop_after=args.stop_after,
    )
    counts = manifest.counts()
    print(f"run: {counts['done']} done, {counts['failed']} failed, {counts['pending']} pending")
    for path in write_reports(run_dir):
        print(f"wrote {path}")
    return 1 if counts["failed"] else 0


def _parse_grid(args: argparse.Namespace) -> dict[str, list[int]]:
    grid: dict[str, list[int]] = {}
    for flag, key in (("k_grid", "k"), ("q_grid", "q"), ("t_grid", "t_max")):
        raw = getattr(args, flag)
        if raw:
            try:
                grid[key] = [int(v) for v in raw.split(",") if v.strip() != ""]
            except ValueError as exc:
                raise ConfigError(f"--{flag.replace('_', '-')}: {exc}") from exc
    if not grid:
        raise ConfigError("sweep needs at least one of --k-grid/--q-grid/--t-grid")
    return grid


def cmd_sweep(args: argparse.Namespace) -> int:
    config, strategy = _resolve(args)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    benchmark = config.load_benchmark()
    templates = PromptTemplates.load(args.templates) if args.templates else None
    rows = run_sweep(
        benchmark,
        _make_factory(config, args, run_dir),
        strategy,
        _parse_grid(args),
        base_config=config.engine_config(),
        templates=templates,
        price=config.price_for(config.backend.model),
    )
    out_csv = run_dir / "sweep.csv"
    write_sweep_csv(rows, out_csv)
    print(f"wrote {out_csv}")
    for row in rows:
        if row.error:
            print(f"row k={row.k} q={row.q} t={row.t_max}: FAILED: {row.error}")
        else:
            assert row.metrics is not None
            print(
                f"row k={row.k} q={row.q} t={row.t_max}: "
                f"f1={row.metrics.f1:.4f} mean_rounds={row.mean_rounds:.2f}"
            )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    for path in write_reports(args.run):
        print(f"wrote {path}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    """Re-execute a run entirely from its response cache."""
    source_dir = Path(args.run)
    manifest = load_manifest(source_dir)
    snapshot = manifest.config
    if not snapshot.get("cache"):
        raise ManifestError("replay needs a run that was executed with --cache")
    cache_dir = source_dir / CACHE_DIR_NAME
    if not cache_dir.exists():
        raise ManifestError(f"no response cache at {cache_dir}")
    config = AppConfig.from_dict(snapshot)
    strategy = _STRATEGIES[snapshot["strategy"]]
    templates_dir = snapshot.get("templates_dir") or None
    templates = PromptTemplates.load(templates_dir) if templates_dir else None
    benchmark = config.load_benchmark()
    factory = config.backend_factory()

    def cached(problem: StepSolution) -> VerifierBackend:
        return CachingBackend(factory(problem), cache_dir)

    out_dir = Path(args.out) if args.out else source_dir / "replay"
    replayed = execute_run(
        benchmark,
        cached,
        strategy,
        config.engine_config(),
        out_dir,
        backend_info=dict(manifest.backend),
        config_snapshot=dict(snapshot),
        templates=templates,
        price=config.price_for(config.backend.model),
        concurrency=config.engine.concurrency,
    )
    counts = replayed.counts()
    print(f"replay: {counts['done']} done, {counts['failed']} failed")
    for path in write_reports(out_dir):
        print(f"wrote {path}")
    return 1 if counts["failed"] else 0


def cmd_validate(args: argparse.Namespace) -> int:
    adapter = load_adapter(args.adapter) if args.adapter else None
    if args.kind == "processbench":
        benchmark = load_processbench(args.path, adapter=adapter)
    elif args.kind == "mathcheck-star":
        if not args.processbench_path:
            raise ConfigError("mathcheck-star validation needs --processbench-path")
        benchmark = build_mathcheck_star(
            args.path, args.processbench_path, mathcheck_adapter=adapter
        )
    elif args.kind == "prm800k":
        benchmark = load_prm800k(args.path, adapter=adapter)
    else:
        benchmark = load_canonical(args.path)
    n_error = sum(1 for p in benchmark.problems if p.label >= 0)
    print(f"{args.kind}: {len(benchmark)} problems valid")
    for source, count in sorted(benchmark.per_source().items(), key=lambda kv: kv[0].value):
        print(f"  {source.value}: {count}")
    print(f"  labeled erroneous: {n_error}, error-free: {len(benchmark) - n_error}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
