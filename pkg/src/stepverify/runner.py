"""Run orchestration: manifests, resumability, response caching, reports.

A run directory contains manifest.json (config snapshot, benchmark identity,
per-problem status), records.jsonl (one record per completed problem), an
optional cache/ of raw responses, and the report files. Re-invoking a run
on the same directory executes only problems still marked pending, so an
interrupted run picks up where it left off. Reports are rebuilt from the
records alone and are byte-stable: replaying a fully cached run yields
identical report files.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .backends import SamplingParams, VerifierBackend
from .core import StepSolution, TokenUsage, solution_to_dict
from .datasets import BenchmarkSet
from .engine import EngineConfig, RunError, build_run_record
from .evaluation import Metrics, ModelPrice, f1_harmonic, price_outcome
from .prompts import PromptTemplates, RenderedPrompt
from .strategies import StrategyKind, run_strategy

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"
CACHE_DIR_NAME = "cache"

STATUS_PENDING = "pending"
STATUS_DONE = "done"
STATUS_FAILED = "failed"


class ManifestError(RuntimeError):
    """The manifest is missing, incomplete, or contradicts the request."""


# ---------------------------------------------------------------------------
# Response cache
# ---------------------------------------------------------------------------


def cache_key(
    model: str,
    prompt: RenderedPrompt,
    params: SamplingParams,
    agent_seed: str,
) -> str:
    """Stable 256-bit digest of everything that determines one call."""
    payload = {
        "model": model,
        "template": prompt.template_id.value,
        "messages": [[m.role.value, m.content] for m in prompt.messages],
        "params": {
            "temperature": params.temperature,
            "top_p": params.top_p,
            "top_k": params.top_k,
            "seed": params.seed,
            "max_tokens": params.max_tokens,
        },
        "agent_seed": agent_seed,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CachingBackend(VerifierBackend):
    """Wraps any backend with an on-disk response cache.

    The key covers model, rendered prompt, sampling params, and a per-agent
    seed component (params seed, agent id, round), so concurrent agents with
    identical prompts still get distinct cache slots. Replaying a fully
    cached run touches the inner backend zero times.
    """

    def __init__(self, inner: VerifierBackend, cache_dir: str | Path) -> None:
        self._inner = inner
        self.model = inner.model
        self._dir = Path(cache_dir)
        self._dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self._dir / key[:2] / f"{key}.json"

    def generate(
        self,
        prompt: RenderedPrompt,
        params: SamplingParams,
        agent_id: int,
        round: int,
    ) -> tuple[str, TokenUsage]:
        agent_seed = f"{params.seed}:{agent_id}:{round}"
        key = cache_key(self.model, prompt, params, agent_seed)
        path = self._path(key)
        if path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            return entry["text"], TokenUsage(
                entry["prompt_tokens"], entry["completion_tokens"]
            )
        text, usage = self._inner.generate(prompt, params, agent_id, round)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp-{os.getpid()}-{threading.get_ident()}")
        tmp.write_text(
            json.dumps(
                {
                    "text": text,
                    "prompt_tokens": usage.prompt_tokens,
                    "completion_tokens": usage.completion_tokens,
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        os.replace(tmp, path)
        return text, usage


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def benchmark_digest(benchmark: BenchmarkSet) -> str:
    hasher = hashlib.sha256()
    for problem in benchmark.problems:
        hasher.update(
            json.dumps(solution_to_dict(problem), sort_keys=True).encode("utf-8")
        )
        hasher.update(b"\n")
    return hasher.hexdigest()


@dataclass
class RunManifest:
    strategy: str
    config: dict[str, Any]
    benchmark: dict[str, Any]
    backend: dict[str, Any]
    records_path: str = RECORDS_NAME
    statuses: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "config": self.config,
            "benchmark": self.benchmark,
            "backend": self.backend,
            "records_path": self.records_path,
            "statuses": self.statuses,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "RunManifest":
        try:
            return cls(
                strategy=record["strategy"],
                config=dict(record["config"]),
                benchmark=dict(record["benchmark"]),
                backend=dict(record["backend"]),
                records_path=record["records_path"],
                statuses=dict(record["statuses"]),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest is missing field {exc}") from exc

    def pending_ids(self) -> list[str]:
        return [pid for pid, status in self.statuses.items() if status == STATUS_PENDING]

    def counts(self) -> dict[str, int]:
        out = {STATUS_PENDING: 0, STATUS_DONE: 0, STATUS_FAILED: 0}
        for status in self.statuses.values():
            out[status] = out.get(status, 0) + 1
        return out


def manifest_path(run_dir: str | Path) -> Path:
    return Path(run_dir) / MANIFEST_NAME


def load_manifest(run_dir: str | Path) -> RunManifest:
    path = manifest_path(run_dir)
    if not path.exists():
        raise ManifestError(f"no manifest at {path}")
    return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_manifest(run_dir: str | Path, manifest: RunManifest) -> None:
    path = manifest_path(run_dir)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def execute_run(
    benchmark: BenchmarkSet,
    make_backend: Callable[[StepSolution], VerifierBackend],
    strategy: StrategyKind,
    config: EngineConfig,
    run_dir: str | Path,
    *,
    backend_info: Mapping[str, Any],
    config_snapshot: Mapping[str, Any],
    templates: PromptTemplates | None = None,
    price: ModelPrice | None = None,
    concurrency: int = 1,
    stop_after: int | None = None,
) -> RunManifest:
    """Run one strategy over a benchmark with checkpointing.

    A manifest in run_dir from a previous invocation resumes: only problems
    still pending are executed, and each completion appends its record and
    checkpoints the manifest before the next result is accepted.
    """
    run_path = Path(run_dir)
    run_path.mkdir(parents=True, exist_ok=True)
    digest = benchmark_digest(benchmark)
    benchmark_info = {
        "name": benchmark.name.value,
        "n_problems": len(benchmark.problems),
        "sha256": digest,
    }
    if manifest_path(run_path).exists():
        manifest = load_manifest(run_path)
        if manifest.benchmark.get("sha256") != digest:
            raise ManifestError(
                "existing manifest was built from a different benchmark; "
                "refusing to mix runs in one directory"
            )
        if manifest.strategy != strategy.value:
            raise ManifestError(
                f"existing manifest ran strategy {manifest.strategy!r}, not {strategy.value!r}"
            )
    else:
        manifest = RunManifest(
            strategy=strategy.value,
            config=dict(config_snapshot),
            benchmark=benchmark_info,
            backend=dict(backend_info),
            statuses={p.id: STATUS_PENDING for p in benchmark.problems},
        )
        save_manifest(run_path, manifest)

    by_id = {p.id: p for p in benchmark.problems}
    pending = [by_id[pid] for pid in manifest.pending_ids()]
    if stop_after is not None:
        pending = pending[:stop_after]
    if not pending:
        return manifest

    records_file = run_path / manifest.records_path
    config_dict = {
        "k": config.k,
        "q": config.q,
        "t_max": config.t_max,
        "retry_cap": config.retry_cap,
        "profile": config.profile.name,
    }

    # One call-level pool per run enforces the global in-flight cap across
    # problems; call tasks never submit further work, so the problem pool
    # blocking on call futures cannot deadlock.
    call_pool: ThreadPoolExecutor | None = None
    problem_pool: ThreadPoolExecutor | None = None
    if concurrency > 1:
        call_pool = ThreadPoolExecutor(max_workers=concurrency)
        problem_pool = ThreadPoolExecutor(max_workers=concurrency)

    def run_one(problem: StepSolution) -> dict[str, Any]:
        backend = make_backend(problem)
        outcome = run_strategy(
            problem,
            backend,
            strategy,
            config,
            templates=templates,
            executor=call_pool,
        )
        if price is not None:
            outcome = price_outcome(outcome, price)
        return build_run_record(
            problem,
            outcome,
            strategy=strategy.value,
            model=backend.model,
            config=config_dict,
        )

    # The coordinator is the only writer: results stream back here and are
    # appended + checkpointed one at a time.
    try:
        with open(records_file, "a", encoding="utf-8") as records:

            def commit(problem_id: str, record: dict[str, Any] | None) -> None:
                if record is not None:
                    records.write(json.dumps(record, sort_keys=True) + "\n")
                    records.flush()
                    manifest.statuses[problem_id] = STATUS_DONE
                else:
                    manifest.statuses[problem_id] = STATUS_FAILED
                save_manifest(run_path, manifest)

            if problem_pool is None:
                for problem in pending:
                    try:
                        commit(problem.id, run_one(problem))
                    except RunError as exc:
                        logger.warning("problem %s failed: %s", problem.id, exc)
                        commit(problem.id, None)
            else:
                futures = {
                    problem_pool.submit(run_one, problem): problem.id
                    for problem in pending
                }
                for future in as_completed(futures):
                    problem_id = futures[future]
                    try:
                        commit(problem_id, future.result())
                    except RunError as exc:
                        logger.warning("problem %s failed: %s", problem_id, exc)
                        commit(problem_id, None)
    finally:
        if problem_pool is not None:
            problem_pool.shutdown(wait=True)
        if call_pool is not None:
            call_pool.shutdown(wait=True)
    return manifest


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def read_records(run_dir: str | Path) -> list[dict[str, Any]]:
    manifest = load_manifest(run_dir)
    path = Path(run_dir) / manifest.records_path
    records: dict[str, dict[str, Any]] = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    record = json.loads(line)
                    records[record["problem_id"]] = record
    return [records[pid] for pid in sorted(records)]


def _metrics_from_records(records: Iterable[Mapping[str, Any]]) -> Metrics:
    n_error = n_correct = hit_error = hit_correct = 0
    for record in records:
        label = record["label"]
        prediction = record["prediction"]
        if label >= 0:
            n_error += 1
            hit_error += int(prediction == label)
        else:
            n_correct += 1
            hit_correct += int(prediction == -1)
    err_acc = hit_error / n_error if n_error else 0.0
    cor_acc = hit_correct / n_correct if n_correct else 0.0
    return Metrics(err_acc, cor_acc, f1_harmonic(err_acc, cor_acc), n_error, n_correct)


_EASY_SOURCES = ("gsm8k", "math")
_HARD_SOURCES = ("olympiadbench", "omnimath")


def write_reports(run_dir: str | Path, *, bootstrap_seed: int = 0) -> list[Path]:
    """Build run_summary.json, per_source.csv, and cost_f1.csv from records.

    Records are aggregated in sorted problem-id order, so two runs with the
    same per-problem records produce byte-identical files regardless of the
    order in which problems finished.
    """
    run_path = Path(run_dir)
    manifest = load_manifest(run_path)
    records = read_records(run_path)
    overall = _metrics_from_records(records)

    prompt_tokens = sum(r["usage"]["prompt_tokens"] for r in records)
    completion_tokens = sum(r["usage"]["completion_tokens"] for r in records)
    total_cost = sum(r["cost_usd"] for r in records)
    mean_rounds = (
        sum(r["rounds_executed"] for r in records) / len(records) if records else 0.0
    )

    ci_low, ci_high = _bootstrap_from_records(records, seed=bootstrap_seed)

    sources = sorted({r["source"] for r in records})
    per_source_metrics = {
        source: _metrics_from_records([r for r in records if r["source"] == source])
        for source in sources
    }
    summary = {
        "strategy": manifest.strategy,
        "config": manifest.config,
        "benchmark": manifest.benchmark,
        "status_counts": manifest.counts(),
        "n_scored": len(records),
        "metrics": {
            "err_acc": overall.err_acc,
            "cor_acc": overall.cor_acc,
            "f1": overall.f1,
            "f1_ci95": [ci_low, ci_high],
            "n_error": overall.n_error,
            "n_correct": overall.n_correct,
        },
        "per_source": {
            source: {
                "err_acc": m.err_acc,
                "cor_acc": m.cor_acc,
                "f1": m.f1,
                "n_error": m.n_error,
                "n_correct": m.n_correct,
            }
            for source, m in per_source_metrics.items()
        },
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        },
        "total_cost_usd": total_cost,
        "mean_rounds": mean_rounds,
    }
    summary_path = run_path / "run_summary.json"
    summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    per_source_path = run_path / "per_source.csv"
    with open(per_source_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("group,err_acc,cor_acc,f1,n_error,n_correct\n")
        for source in sources:
            m = per_source_metrics[source]
            fh.write(
                f"{source},{m.err_acc:.6f},{m.cor_acc:.6f},{m.f1:.6f},{m.n_error},{m.n_correct}\n"
            )
        easy = [r for r in records if r["source"] in _EASY_SOURCES]
        hard = [r for r in records if r["source"] in _HARD_SOURCES]
        if easy and hard:
            for group, subset in (("easy", easy), ("hard", hard)):
                m = _metrics_from_records(subset)
                fh.write(
                    f"{group},{m.err_acc:.6f},{m.cor_acc:.6f},{m.f1:.6f},{m.n_error},{m.n_correct}\n"
                )

    cost_path = run_path / "cost_f1.csv"
    with open(cost_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("strategy,mean_cost_usd,f1\n")
        mean_cost = total_cost / len(records) if records else 0.0
        fh.write(f"{manifest.strategy},{mean_cost:.8f},{overall.f1:.6f}\n")

    return [summary_path, per_source_path, cost_path]


def _bootstrap_from_records(
    records: list[dict[str, Any]], *, seed: int
) -> tuple[float, float]:
    """Percentile CI on F1 straight from (label, prediction) pairs."""
    if not records:
        return 0.0, 0.0
    import numpy as np

    from .evaluation import _f1_at

    labels = np.array([r["label"] for r in records], dtype=np.int64)
    sentinel = -(10**9)
    preds = np.array(
        [sentinel if r["prediction"] is None else r["prediction"] for r in records],
        dtype=np.int64,
    )
    rng = np.random.default_rng(seed)
    n = len(labels)
    stats = [_f1_at(labels, preds, rng.integers(0, n, size=n)) for _ in range(1000)]
    low, high = np.percentile(stats, [2.5, 97.5])
    return float(low), float(high)
