"""Core value types shared across the verification pipeline.

Locations index solution steps from 0; -1 means "no error found". A verdict
whose text could not be parsed into a legal location carries the INVALID
sentinel, which is distinct from every integer location.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Iterable

# Sentinel for unparseable verdicts. Never equal to a legal location.
INVALID = None


class LocationRangeError(ValueError):
    """Raised when a location falls outside {-1, 0, ..., n_steps - 1}."""


class Source(Enum):
    GSM8K = "gsm8k"
    MATH = "math"
    OLYMPIADBENCH = "olympiadbench"
    OMNIMATH = "omnimath"
    MATHCHECK = "mathcheck"
    PRM800K = "prm800k"


def validate_location(raw: int, n_steps: int) -> int:
    """Return raw unchanged if it lies in {-1, 0, ..., n_steps - 1}."""
    if not isinstance(raw, int) or isinstance(raw, bool):
        raise LocationRangeError(f"location must be an integer, got {raw!r}")
    if raw < -1 or raw >= n_steps:
        raise LocationRangeError(
            f"location {raw} outside valid range [-1, {n_steps - 1}] for {n_steps} steps"
        )
    return raw


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class StepSolution:
    """One problem plus a candidate step-by-step solution and its error label."""

    id: str
    source: Source
    problem: str
    steps: tuple[str, ...]
    label: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.id:
            raise ValueError("solution id must be non-empty")
        if len(self.steps) == 0:
            raise ValueError("solution must contain at least one step")
        try:
            validate_location(self.label, len(self.steps))
        except LocationRangeError as exc:
            raise LocationRangeError(f"label of {self.id!r}: {exc}") from exc

    @property
    def n_steps(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Verdict:
    """One agent's answer for one round: a location plus the raw reasoning text."""

    agent_id: int
    round: int
    location: int | None
    reasoning: str
    usage: TokenUsage = field(default_factory=TokenUsage)

    def __post_init__(self) -> None:
        if self.agent_id < 1:
            raise ValueError("agent_id starts at 1")
        if self.round < 1:
            raise ValueError("round starts at 1")
        if self.location is not INVALID and not isinstance(self.location, int):
            raise ValueError("location must be an int or INVALID")


@dataclass(frozen=True)
class RoundAggregate:
    """Majority outcome of one round over all K agents.

    support is the exact fraction of agents backing the majority location;
    the denominator is always K, so INVALID verdicts dilute support.
    """

    round: int
    majority_location: int | None
    support: Fraction
    verdicts: tuple[Verdict, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdicts", tuple(self.verdicts))
        if not 0 <= self.support <= 1:
            raise ValueError("support must lie in [0, 1]")
        if any(v.round != self.round for v in self.verdicts):
            raise ValueError("aggregate mixes verdicts from different rounds")


@dataclass(frozen=True)
class RunOutcome:
    """Result of running one strategy on one problem."""

    prediction: int | None
    rounds_executed: int
    history: tuple[RoundAggregate, ...]
    stopped_early: bool
    usage: TokenUsage = field(default_factory=TokenUsage)
    cost_usd: float = 0.0
    retries: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        if self.rounds_executed != len(self.history):
            raise ValueError("rounds_executed must equal len(history)")


# ---------------------------------------------------------------------------
# JSON serialization. Round-trips are lossless; Fractions travel as "num/den".
# ---------------------------------------------------------------------------


def solution_to_dict(sol: StepSolution) -> dict[str, Any]:
    return {
        "id": sol.id,
        "source": sol.source.value,
        "problem": sol.problem,
        "steps": list(sol.steps),
        "label": sol.label,
    }


def solution_from_dict(record: dict[str, Any]) -> StepSolution:
    return StepSolution(
        id=str(record["id"]),
        source=Source(record["source"]),
        problem=record["problem"],
        steps=tuple(record["steps"]),
        label=record["label"],
    )


def usage_to_dict(usage: TokenUsage) -> dict[str, int]:
    return {
        "prompt_tokens": usage.prompt_tokens,
        "completion_tokens": usage.completion_tokens,
    }


def usage_from_dict(record: dict[str, Any]) -> TokenUsage:
    return TokenUsage(int(record["prompt_tokens"]), int(record["completion_tokens"]))


def verdict_to_dict(verdict: Verdict) -> dict[str, Any]:
    return {
        "agent_id": verdict.agent_id,
        "round": verdict.round,
        "location": verdict.location,
        "reasoning": verdict.reasoning,
        "usage": usage_to_dict(verdict.usage),
    }


def verdict_from_dict(record: dict[str, Any]) -> Verdict:
    return Verdict(
        agent_id=record["agent_id"],
        round=record["round"],
        location=record["location"],
        reasoning=record["reasoning"],
        usage=usage_from_dict(record["usage"]),
    )


def aggregate_to_dict(agg: RoundAggregate) -> dict[str, Any]:
    return {
        "round": agg.round,
        "majority_location": agg.majority_location,
        "support": f"{agg.support.numerator}/{agg.support.denominator}",
        "verdicts": [verdict_to_dict(v) for v in agg.verdicts],
    }


def aggregate_from_dict(record: dict[str, Any]) -> RoundAggregate:
    return RoundAggregate(
        round=record["round"],
        majority_location=record["majority_location"],
        support=Fraction(record["support"]),
        verdicts=tuple(verdict_from_dict(v) for v in record["verdicts"]),
    )


def outcome_to_dict(outcome: RunOutcome) -> dict[str, Any]:
    return {
        "prediction": outcome.prediction,
        "rounds_executed": outcome.rounds_executed,
        "history": [aggregate_to_dict(a) for a in outcome.history],
        "stopped_early": outcome.stopped_early,
        "usage": usage_to_dict(outcome.usage),
        "cost_usd": outcome.cost_usd,
        "retries": outcome.retries,
    }


def outcome_from_dict(record: dict[str, Any]) -> RunOutcome:
    return RunOutcome(
        prediction=record["prediction"],
        rounds_executed=record["rounds_executed"],
        history=tuple(aggregate_from_dict(a) for a in record["history"]),
        stopped_early=record["stopped_early"],
        usage=usage_from_dict(record["usage"]),
        cost_usd=record["cost_usd"],
        retries=record["retries"],
    )


def write_jsonl(path: str, solutions: Iterable[StepSolution]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sol in solutions:
            fh.write(json.dumps(solution_to_dict(sol), ensure_ascii=False) + "\n")
