"""Benchmark ingestion: JSONL loaders, field adapters, label derivation.

Raw releases disagree about field names, so each benchmark ships a plain
key-value adapter file mapping canonical fields (id, source, problem, steps,
label) to raw record fields. Loading is strict: a record that cannot be
mapped into a valid StepSolution is a SchemaError naming the offending line.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from .core import LocationRangeError, Source, StepSolution


class SchemaError(ValueError):
    """A dataset record or adapter file violates the expected shape."""


class BenchmarkName(Enum):
    PROCESSBENCH = "processbench"
    MATHCHECK_STAR = "mathcheck-star"
    PRM800K = "prm800k"
    SYNTHETIC = "synthetic"


class Difficulty(Enum):
    EASY = "easy"
    HARD = "hard"


@dataclass(frozen=True)
class BenchmarkSet:
    name: BenchmarkName
    problems: tuple[StepSolution, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "problems", tuple(self.problems))

    def __len__(self) -> int:
        return len(self.problems)

    def per_source(self) -> dict[Source, int]:
        counts: dict[Source, int] = {}
        for problem in self.problems:
            counts[problem.source] = counts.get(problem.source, 0) + 1
        return counts

    def limited(self, n: int | None) -> "BenchmarkSet":
        """First n problems in load order; deterministic desk-scale subsample."""
        if n is None or n >= len(self.problems):
            return self
        if n < 0:
            raise ValueError("limit must be non-negative")
        return BenchmarkSet(self.name, self.problems[:n])


def difficulty_of(source: Source) -> Difficulty:
    if source in (Source.GSM8K, Source.MATH):
        return Difficulty.EASY
    if source in (Source.OLYMPIADBENCH, Source.OMNIMATH):
        return Difficulty.HARD
    raise ValueError(f"difficulty is only defined for ProcessBench sources, not {source.value}")


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------


def load_adapter(path: str | Path) -> dict[str, str]:
    """Parse a key-value adapter file: 'canonical = raw' lines, # comments."""
    mapping: dict[str, str] = {}
    for lineno, raw_line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected 'canonical = raw'")
        canonical, _, raw = line.partition("=")
        mapping[canonical.strip()] = raw.strip()
    return mapping


def default_adapter(benchmark: str) -> dict[str, str]:
    text = (
        resources.files("stepverify")
        .joinpath(f"adapters/{benchmark}.map")
        .read_text(encoding="utf-8")
    )
    mapping: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        canonical, _, raw = line.partition("=")
        mapping[canonical.strip()] = raw.strip()
    return mapping


def _lookup(record: Mapping[str, Any], field_spec: str) -> Any:
    if field_spec.startswith("const:"):
        return field_spec[len("const:") :]
    value: Any = record
    for part in field_spec.split("."):
        if not isinstance(value, Mapping) or part not in value:
            raise KeyError(field_spec)
        value = value[part]
    return value


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise SchemaError(f"{path}:{lineno}: record is not a JSON object")
            yield lineno, record


def _solution_from_record(
    record: Mapping[str, Any],
    adapter: Mapping[str, str],
    *,
    context: str,
) -> StepSolution:
    def fetch(field: str) -> Any:
        try:
            return _lookup(record, adapter[field])
        except KeyError as exc:
            raise SchemaError(f"{context}: missing field {adapter.get(field, field)!r}") from exc

    raw_source = fetch("source")
    try:
        source = Source(str(raw_source).lower())
    except ValueError as exc:
        raise SchemaError(f"{context}: unknown source {raw_source!r}") from exc
    steps = fetch("steps")
    if not isinstance(steps, list) or not all(isinstance(s, str) for s in steps):
        raise SchemaError(f"{context}: steps must be a list of strings")
    label = fetch("label")
    if not isinstance(label, int) or isinstance(label, bool):
        raise SchemaError(f"{context}: label must be an integer")
    try:
        return StepSolution(
            id=str(fetch("id")),
            source=source,
            problem=str(fetch("problem")),
            steps=tuple(steps),
            label=label,
        )
    except (LocationRangeError, ValueError) as exc:
        raise SchemaError(f"{context}: {exc}") from exc


def load_processbench(
    path: str | Path, *, adapter: Mapping[str, str] | None = None
) -> BenchmarkSet:
    """Load a ProcessBench-format JSONL file, order-preserving."""
    mapping = adapter or default_adapter("processbench")
    problems = [
        _solution_from_record(record, mapping, context=f"{path}:{lineno}")
        for lineno, record in _read_jsonl(path)
    ]
    return BenchmarkSet(BenchmarkName.PROCESSBENCH, tuple(problems))


def build_mathcheck_star(
    mathcheck_path: str | Path,
    processbench_path: str | Path,
    *,
    mathcheck_adapter: Mapping[str, str] | None = None,
    processbench_adapter: Mapping[str, str] | None = None,
) -> BenchmarkSet:
    """Error-labeled problems plus error-free GSM8K problems, ids unique.

    The first component contributes every record of the error-labeled file
    (all labels must be >= 0); the second contributes only GSM8K records
    whose label is -1, rebalancing the benchmark with correct solutions.
    """
    mc_mapping = mathcheck_adapter or default_adapter("mathcheck")
    problems: list[StepSolution] = []
    for lineno, record in _read_jsonl(mathcheck_path):
        sol = _solution_from_record(record, mc_mapping, context=f"{mathcheck_path}:{lineno}")
        if sol.label < 0:
            raise SchemaError(
                f"{mathcheck_path}:{lineno}: expected an error-labeled problem, got label -1"
            )
        problems.append(sol)
    gsm_correct = [
        p
        for p in load_processbench(processbench_path, adapter=processbench_adapter).problems
        if p.source is Source.GSM8K and p.label == -1
    ]
    problems.extend(gsm_correct)
    seen: set[str] = set()
    for problem in problems:
        if problem.id in seen:
            raise SchemaError(f"duplicate problem id {problem.id!r}")
        seen.add(problem.id)
    return BenchmarkSet(BenchmarkName.MATHCHECK_STAR, tuple(problems))


def map_prm800k(ratings: Iterable[int]) -> int:
    """Index of the first step rated -1, or -1 when no step is."""
    ratings = list(ratings)
    for index, rating in enumerate(ratings):
        if rating not in (-1, 0, 1):
            raise SchemaError(f"rating at step {index} must be in {{-1, 0, 1}}, got {rating!r}")
        if rating == -1:
            return index
    return -1


def load_prm800k(
    path: str | Path,
    *,
    sample_size: int = 300,
    seed: int = 42,
    adapter: Mapping[str, str] | None = None,
    manifest_path: str | Path | None = None,
) -> BenchmarkSet:
    """Load flat PRM800K-style records and take a seeded uniform subsample.

    Records carry per-step ratings in {-1, 0, 1}; the label is the first
    step rated -1 (or -1 if none). The chosen ids are written to a manifest
    JSON next to the input so the sample is auditable and reproducible.
    """
    mapping = adapter or default_adapter("prm800k")
    problems: list[StepSolution] = []
    for lineno, record in _read_jsonl(path):
        context = f"{path}:{lineno}"

        def fetch(field: str) -> Any:
            try:
                return _lookup(record, mapping[field])
            except KeyError as exc:
                raise SchemaError(
                    f"{context}: missing field {mapping.get(field, field)!r}"
                ) from exc

        ratings = fetch("ratings")
        if not isinstance(ratings, list):
            raise SchemaError(f"{context}: ratings must be a list")
        steps = fetch("steps")
        if not isinstance(steps, list) or not all(isinstance(s, str) for s in steps):
            raise SchemaError(f"{context}: steps must be a list of strings")
        if len(ratings) != len(steps):
            raise SchemaError(f"{context}: {len(ratings)} ratings for {len(steps)} steps")
        try:
            label = map_prm800k(ratings)
        except SchemaError as exc:
            raise SchemaError(f"{context}: {exc}") from exc
        try:
            problems.append(
                StepSolution(
                    id=str(fetch("id")),
                    source=Source.PRM800K,
                    problem=str(fetch("problem")),
                    steps=tuple(steps),
                    label=label,
                )
            )
        except (LocationRangeError, ValueError) as exc:
            raise SchemaError(f"{context}: {exc}") from exc
    take = min(sample_size, len(problems))
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(len(problems)), take))
    sampled = tuple(problems[i] for i in chosen)
    manifest = {
        "seed": seed,
        "sample_size": take,
        "population": len(problems),
        "ids": [p.id for p in sampled],
    }
    out = Path(manifest_path) if manifest_path is not None else Path(f"{path}.sample.json")
    out.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return BenchmarkSet(BenchmarkName.PRM800K, sampled)


def load_canonical(path: str | Path, name: BenchmarkName = BenchmarkName.PROCESSBENCH) -> BenchmarkSet:
    """Load a JSONL file already in canonical form."""
    mapping = default_adapter("processbench")
    problems = [
        _solution_from_record(record, mapping, context=f"{path}:{lineno}")
        for lineno, record in _read_jsonl(path)
    ]
    return BenchmarkSet(name, tuple(problems))
