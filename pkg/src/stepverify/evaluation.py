"""Scoring, cost accounting, bootstrap intervals, and parameter sweeps.

The headline metric is the harmonic mean (F1) of two accuracies: exact
first-error-index match on problems that contain an error, and predicting -1
on problems that do not. A missing or unparseable prediction counts as wrong
in its class rather than being dropped.
"""
from __future__ import annotations

import csv
import itertools
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import RunOutcome, Source, StepSolution, TokenUsage
from .datasets import BenchmarkSet
from .engine import EngineConfig, RunError
from .prompts import PromptTemplates
from .backends import VerifierBackend
from .strategies import StrategyKind, run_strategy


class MissingPriceError(LookupError):
    """No price entry exists for a model that appears in the run records."""


@dataclass(frozen=True)
class Metrics:
    err_acc: float
    cor_acc: float
    f1: float
    n_error: int
    n_correct: int


def f1_harmonic(err_acc: float, cor_acc: float) -> float:
    """Harmonic mean of the two class accuracies; 0 when both are 0."""
    if err_acc + cor_acc == 0:
        return 0.0
    return 2.0 * err_acc * cor_acc / (err_acc + cor_acc)


def _metrics_for(problems: Sequence[StepSolution], predictions: Mapping[str, int | None]) -> Metrics:
    n_error = n_correct = hit_error = hit_correct = 0
    for problem in problems:
        predicted = predictions.get(problem.id)
        if problem.label >= 0:
            n_error += 1
            hit_error += int(predicted == problem.label)
        else:
            n_correct += 1
            hit_correct += int(predicted == -1)
    err_acc = hit_error / n_error if n_error else 0.0
    cor_acc = hit_correct / n_correct if n_correct else 0.0
    return Metrics(err_acc, cor_acc, f1_harmonic(err_acc, cor_acc), n_error, n_correct)


@dataclass(frozen=True)
class ScoreReport:
    overall: Metrics
    per_source: dict[Source, Metrics]


def score(predictions: Mapping[str, int | None], benchmark: BenchmarkSet) -> ScoreReport:
    """Score predicted locations against labels; per-source breakdown included.

    Permutation-invariant: only the (id -> prediction) pairing matters.
    """
    overall = _metrics_for(benchmark.problems, predictions)
    per_source: dict[Source, Metrics] = {}
    for source in Source:
        subset = [p for p in benchmark.problems if p.source is source]
        if subset:
            per_source[source] = _metrics_for(subset, predictions)
    return ScoreReport(overall, per_source)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelPrice:
    """USD per one million prompt/completion tokens."""

    prompt_usd_per_million: float
    completion_usd_per_million: float

    def cost(self, usage: TokenUsage) -> float:
        return (
            usage.prompt_tokens * self.prompt_usd_per_million
            + usage.completion_tokens * self.completion_usd_per_million
        ) / 1_000_000.0


@dataclass(frozen=True)
class CostLedger:
    problem_usage: dict[str, TokenUsage]
    problem_usd: dict[str, float]
    model_usd: dict[str, float]
    total_usd: float


def price_outcome(outcome: RunOutcome, price: ModelPrice) -> RunOutcome:
    return replace(outcome, cost_usd=price.cost(outcome.usage))


def accumulate_cost(
    run_records: Iterable[Mapping[str, Any]], price_table: Mapping[str, ModelPrice]
) -> CostLedger:
    """Recompute USD from token totals; unknown models fail loudly."""
    problem_usage: dict[str, TokenUsage] = {}
    problem_usd: dict[str, float] = {}
    model_usd: dict[str, float] = {}
    total = 0.0
    for record in run_records:
        model = record["model"]
        price = price_table.get(model)
        if price is None:
            raise MissingPriceError(f"no price entry for model {model!r}")
        usage = TokenUsage(
            prompt_tokens=int(record["usage"]["prompt_tokens"]),
            completion_tokens=int(record["usage"]["completion_tokens"]),
        )
        cost = price.cost(usage)
        problem_id = record["problem_id"]
        problem_usage[problem_id] = problem_usage.get(problem_id, TokenUsage()) + usage
        problem_usd[problem_id] = problem_usd.get(problem_id, 0.0) + cost
        model_usd[model] = model_usd.get(model, 0.0) + cost
        total += cost
    return CostLedger(problem_usage, problem_usd, model_usd, total)


# ---------------------------------------------------------------------------
# Bootstrap confidence intervals
# ---------------------------------------------------------------------------


def _prediction_array(
    problems: Sequence[StepSolution], predictions: Mapping[str, int | None]
) -> np.ndarray:
    # INVALID / missing predictions become a sentinel that matches no label.
    sentinel = -(10**9)
    values = [predictions.get(p.id) for p in problems]
    return np.array([sentinel if v is None else v for v in values], dtype=np.int64)


def _f1_at(labels: np.ndarray, preds: np.ndarray, idx: np.ndarray) -> float:
    lab, pre = labels[idx], preds[idx]
    err_mask = lab >= 0
    n_err = int(err_mask.sum())
    n_cor = int((~err_mask).sum())
    err_acc = float((pre[err_mask] == lab[err_mask]).mean()) if n_err else 0.0
    cor_acc = float((pre[~err_mask] == -1).mean()) if n_cor else 0.0
    return f1_harmonic(err_acc, cor_acc)


def bootstrap_f1_ci(
    benchmark: BenchmarkSet,
    predictions: Mapping[str, int | None],
    *,
    n_resamples: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Percentile bootstrap interval for F1 over problems."""
    labels = np.array([p.label for p in benchmark.problems], dtype=np.int64)
    preds = _prediction_array(benchmark.problems, predictions)
    rng = np.random.default_rng(seed)
    n = len(labels)
    stats = [
        _f1_at(labels, preds, rng.integers(0, n, size=n)) for _ in range(n_resamples)
    ]
    low, high = np.percentile(stats, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(low), float(high)


def bootstrap_f1_diff_ci(
    benchmark: BenchmarkSet,
    predictions_a: Mapping[str, int | None],
    predictions_b: Mapping[str, int | None],
    *,
    n_resamples: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Paired percentile bootstrap interval for F1(a) - F1(b)."""
    labels = np.array([p.label for p in benchmark.problems], dtype=np.int64)
    preds_a = _prediction_array(benchmark.problems, predictions_a)
    preds_b = _prediction_array(benchmark.problems, predictions_b)
    rng = np.random.default_rng(seed)
    n = len(labels)
    diffs = []
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        diffs.append(_f1_at(labels, preds_a, idx) - _f1_at(labels, preds_b, idx))
    low, high = np.percentile(diffs, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(low), float(high)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

BackendFactory = Callable[[StepSolution], VerifierBackend]


@dataclass(frozen=True)
class SweepRow:
    strategy: StrategyKind
    k: int
    q: int
    t_max: int
    metrics: Metrics | None
    mean_rounds: float
    mean_cost_usd: float
    usage: TokenUsage
    n_problems: int
    predictions: dict[str, int | None] = field(repr=False, default_factory=dict)
    error: str | None = None


_GRID_KEYS = ("k", "q", "t_max")


def sweep(
    benchmark: BenchmarkSet,
    backend: VerifierBackend | BackendFactory,
    strategy: StrategyKind,
    grid: Mapping[str, Sequence[int]],
    *,
    base_config: EngineConfig | None = None,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
    price: ModelPrice | None = None,
) -> list[SweepRow]:
    """Run the strategy once per grid point and score each row.

    grid maps any of k/q/t_max to the values to try; rows are the cartesian
    product in sorted key order. A failing problem poisons only its own row.
    backend may be a factory taking the problem, so simulators can give every
    problem an independent seeded instance (rows then share round-1 draws).
    """
    unknown = set(grid) - set(_GRID_KEYS)
    if unknown:
        raise ValueError(f"grid keys must be in {_GRID_KEYS}, got {sorted(unknown)}")
    base = base_config or EngineConfig()
    make_backend: BackendFactory
    if isinstance(backend, VerifierBackend):
        make_backend = lambda problem: backend
    else:
        make_backend = backend
    keys = [key for key in _GRID_KEYS if key in grid]
    rows: list[SweepRow] = []
    for values in itertools.product(*(grid[key] for key in keys)):
        overrides = dict(zip(keys, values))
        config = replace(base, **overrides)
        predictions: dict[str, int | None] = {}
        usage = TokenUsage()
        rounds = 0
        cost = 0.0
        error: str | None = None
        try:
            for problem in benchmark.problems:
                outcome = run_strategy(
                    problem,
                    make_backend(problem),
                    strategy,
                    config,
                    templates=templates,
                    executor=executor,
                )
                if price is not None:
                    outcome = price_outcome(outcome, price)
                predictions[problem.id] = outcome.prediction
                usage = usage + outcome.usage
                rounds += outcome.rounds_executed
                cost += outcome.cost_usd
        except RunError as exc:
            error = str(exc)
        n = len(benchmark.problems)
        rows.append(
            SweepRow(
                strategy=strategy,
                k=config.k,
                q=config.q,
                t_max=config.t_max,
                metrics=score(predictions, benchmark).overall if error is None else None,
                mean_rounds=rounds / n if n and error is None else 0.0,
                mean_cost_usd=cost / n if n and error is None else 0.0,
                usage=usage,
                n_problems=n,
                predictions=predictions if error is None else {},
                error=error,
            )
        )
    return rows


SWEEP_CSV_COLUMNS = [
    "strategy",
    "k",
    "q",
    "t_max",
    "n_problems",
    "err_acc",
    "cor_acc",
    "f1",
    "mean_rounds",
    "mean_cost_usd",
    "prompt_tokens",
    "completion_tokens",
    "error",
]


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        for row in rows:
            metrics = row.metrics
            writer.writerow(
                [
                    row.strategy.value,
                    row.k,
                    row.q,
                    row.t_max,
                    row.n_problems,
                    f"{metrics.err_acc:.6f}" if metrics else "",
                    f"{metrics.cor_acc:.6f}" if metrics else "",
                    f"{metrics.f1:.6f}" if metrics else "",
                    f"{row.mean_rounds:.4f}",
                    f"{row.mean_cost_usd:.8f}",
                    row.usage.prompt_tokens,
                    row.usage.completion_tokens,
                    row.error or "",
                ]
            )
