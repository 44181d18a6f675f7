"""Iterative multi-agent verification with consistency-based stopping.

K agents independently locate the first bad step, then repeatedly re-examine
their own previous verdicts. After each round the engine takes a majority
vote; the run stops once the majority has been identical for the last q
rounds AND the proportion of agents backing it has not dropped anywhere in
that window, else it runs to the round cap T. Each agent only ever sees its
own previous verdict, never another agent's.
"""
from __future__ import annotations

import hashlib
from collections import Counter
from concurrent.futures import Executor, wait
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Sequence

from .backends import (
    PROFILES,
    ProtocolError,
    SamplingParams,
    SamplingProfile,
    TransportError,
    VerifierBackend,
)
from .core import (
    INVALID,
    LocationRangeError,
    RoundAggregate,
    RunOutcome,
    StepSolution,
    TokenUsage,
    Verdict,
    usage_to_dict,
)
from .prompts import (
    ParseError,
    PromptTemplates,
    RenderedPrompt,
    default_templates,
    extract_location,
    render_initial,
    render_self_check,
)


class RunError(RuntimeError):
    """A backend failure aborted a run; carries the rounds completed so far."""

    def __init__(
        self, problem_id: str, history: tuple[RoundAggregate, ...], cause: Exception
    ) -> None:
        super().__init__(f"run on {problem_id!r} failed: {cause}")
        self.problem_id = problem_id
        self.history = history
        self.cause = cause


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the verification loop.

    k: number of parallel agents. q: how many trailing rounds must agree
    (q=0 disables self-checking entirely). t_max: hard round cap.
    retry_cap: extra attempts per call when output cannot be parsed.
    """

    k: int = 5
    q: int = 3
    t_max: int = 10
    retry_cap: int = 2
    profile: SamplingProfile = field(default_factory=lambda: PROFILES["closed-source"])

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.q < 0:
            raise ValueError("q must be non-negative")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.q > self.t_max:
            raise ValueError("q cannot exceed t_max")
        if self.retry_cap < 0:
            raise ValueError("retry_cap must be non-negative")


def majority_vote(locations: Sequence[int | None]) -> int | None:
    """Most common valid location; ties break to the smallest; all-INVALID -> INVALID."""
    if not locations:
        raise ValueError("majority_vote needs at least one location")
    counts = Counter(loc for loc in locations if loc is not INVALID)
    if not counts:
        return INVALID
    best = max(counts.values())
    return min(loc for loc, count in counts.items() if count == best)


def support_proportion(
    locations: Sequence[int | None], majority: int | None
) -> Fraction:
    """Exact fraction of agents voting for the majority; K stays in the denominator."""
    if not locations:
        raise ValueError("support_proportion needs at least one location")
    if majority is INVALID:
        return Fraction(0)
    return Fraction(sum(1 for loc in locations if loc == majority), len(locations))


def should_stop(history: Sequence[RoundAggregate], q: int) -> bool:
    """True once the last q majorities agree and support never dropped in the window.

    Never fires before round max(q, 2). For q <= 1 the window conditions are
    vacuous, so the answer is simply t >= 2 (a q of 0 never reaches here in
    practice: the runner stops after round 1 without self-checking).
    """
    t = len(history)
    if t < max(q, 2):
        return False
    if q <= 1:
        return True
    window = history[-q:]
    anchor = window[0].majority_location
    if anchor is INVALID:
        return False
    if any(agg.majority_location != anchor for agg in window[1:]):
        return False
    supports = [agg.support for agg in window]
    return all(a <= b for a, b in zip(supports, supports[1:]))


def aggregate_round(round: int, verdicts: Sequence[Verdict]) -> RoundAggregate:
    locations = [v.location for v in verdicts]
    majority = majority_vote(locations)
    return RoundAggregate(
        round=round,
        majority_location=majority,
        support=support_proportion(locations, majority),
        verdicts=tuple(verdicts),
    )


def request_verdict(
    problem: StepSolution,
    backend: VerifierBackend,
    prompt: RenderedPrompt,
    params: SamplingParams,
    agent_id: int,
    round: int,
    retry_cap: int,
) -> tuple[Verdict, TokenUsage, int]:
    """One agent call with parse retries.

    Returns the verdict (INVALID once retries are exhausted), token usage
    summed over every attempt, and the number of retries consumed.
    """
    total = TokenUsage()
    retries = 0
    for attempt in range(retry_cap + 1):
        text, usage = backend.generate(prompt, params, agent_id, round)
        total = total + usage
        try:
            location = extract_location(text, problem.n_steps)
        except (ParseError, LocationRangeError):
            if attempt < retry_cap:
                retries += 1
                continue
            return Verdict(agent_id, round, INVALID, text, usage), total, retries
        return Verdict(agent_id, round, location, text, usage), total, retries
    raise AssertionError("unreachable")


def execute_prompts(
    problem: StepSolution,
    backend: VerifierBackend,
    prompts: Sequence[RenderedPrompt],
    params: SamplingParams,
    round: int,
    retry_cap: int,
    executor: Executor | None = None,
) -> tuple[list[Verdict], TokenUsage, int]:
    """Issue one call per agent (1-indexed) and collect verdicts in agent order.

    With an executor the calls run concurrently; results are always ordered
    by agent id, so scheduling never changes the outcome.
    """
    tasks: list[Callable[[], tuple[Verdict, TokenUsage, int]]] = [
        (
            lambda p=prompt, a=agent_id: request_verdict(
                problem, backend, p, params, a, round, retry_cap
            )
        )
        for agent_id, prompt in enumerate(prompts, start=1)
    ]
    if executor is None:
        results = [task() for task in tasks]
    else:
        futures = [executor.submit(task) for task in tasks]
        wait(futures)
        for future in futures:
            error = future.exception()
            if error is not None:
                raise error
        results = [future.result() for future in futures]
    verdicts = [r[0] for r in results]
    usage = TokenUsage()
    retries = 0
    for _, used, extra in results:
        usage = usage + used
        retries += extra
    return verdicts, usage, retries


def run_temporal_consistency(
    problem: StepSolution,
    backend: VerifierBackend,
    config: EngineConfig | None = None,
    *,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    """Run the full verification loop on one problem.

    Round 1 sends the initial prompt to all K agents. Every later round, each
    agent re-examines its own previous verdict (agents whose last output was
    unparseable get the initial prompt again). The loop exits at the first
    round where should_stop holds, or at t_max. The prediction is the final
    round's majority. cost_usd is left at 0; pricing happens downstream.
    """
    cfg = config or EngineConfig()
    tpl = templates or default_templates()
    initial_prompt = render_initial(problem, tpl)
    history: list[RoundAggregate] = []
    total_usage = TokenUsage()
    total_retries = 0

    def attempt_round(prompts: Sequence[RenderedPrompt], round: int) -> list[Verdict]:
        nonlocal total_usage, total_retries
        try:
            verdicts, usage, retries = execute_prompts(
                problem,
                backend,
                prompts,
                cfg.profile.for_round(round),
                round,
                cfg.retry_cap,
                executor,
            )
        except (TransportError, ProtocolError) as exc:
            raise RunError(problem.id, tuple(history), exc) from exc
        total_usage = total_usage + usage
        total_retries += retries
        return verdicts

    verdicts = attempt_round([initial_prompt] * cfg.k, 1)
    history.append(aggregate_round(1, verdicts))
    stopped_early = False
    if cfg.q > 0:
        for t in range(2, cfg.t_max + 1):
            prompts = [
                render_self_check(problem, v, tpl)
                if v.location is not INVALID
                else initial_prompt
                for v in verdicts
            ]
            verdicts = attempt_round(prompts, t)
            history.append(aggregate_round(t, verdicts))
            if should_stop(history, cfg.q):
                stopped_early = True
                break

    return RunOutcome(
        prediction=history[-1].majority_location,
        rounds_executed=len(history),
        history=tuple(history),
        stopped_early=stopped_early,
        usage=total_usage,
        cost_usd=0.0,
        retries=total_retries,
    )


def build_run_record(
    problem: StepSolution,
    outcome: RunOutcome,
    *,
    strategy: str,
    model: str,
    config: dict[str, Any],
) -> dict[str, Any]:
    """Flatten one run into a JSON-ready record.

    Verdict texts are stored as sha256 hashes; full texts are recoverable
    from the response cache when the run was executed with caching on.
    """
    rounds = []
    for agg in outcome.history:
        rounds.append(
            {
                "round": agg.round,
                "majority_location": agg.majority_location,
                "support": f"{agg.support.numerator}/{agg.support.denominator}",
                "verdicts": [
                    {
                        "agent_id": v.agent_id,
                        "location": v.location,
                        "reasoning_sha256": hashlib.sha256(
                            v.reasoning.encode("utf-8")
                        ).hexdigest(),
                        "usage": usage_to_dict(v.usage),
                    }
                    for v in agg.verdicts
                ],
            }
        )
    return {
        "problem_id": problem.id,
        "source": problem.source.value,
        "label": problem.label,
        "strategy": strategy,
        "model": model,
        "config": config,
        "prediction": outcome.prediction,
        "rounds_executed": outcome.rounds_executed,
        "stopped_early": outcome.stopped_early,
        "retries": outcome.retries,
        "usage": usage_to_dict(outcome.usage),
        "cost_usd": outcome.cost_usd,
        "rounds": rounds,
    }
