"""Baseline verification strategies and ablations.

All strategies share the engine's call machinery (prompt rendering, parse
retries, aggregation) so call accounting is uniform: greedy issues 1 primary
call, majority K, debate 2K, single self-check 2K, plus parse retries.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import replace
from enum import Enum

from .backends import PROFILES, ProtocolError, TransportError, VerifierBackend
from .core import INVALID, RunOutcome, StepSolution, TokenUsage
from .engine import (
    EngineConfig,
    RunError,
    aggregate_round,
    execute_prompts,
    run_temporal_consistency,
)
from .prompts import (
    PromptTemplates,
    default_templates,
    render_debate,
    render_initial,
    render_self_check,
)


class StrategyKind(Enum):
    GREEDY = "greedy"
    MAJORITY = "majority"
    DEBATE = "debate"
    TEMPORAL = "temporal"
    TEMPORAL_K1 = "temporal-k1"
    SELFCHECK_ONCE = "selfcheck-once"


def run_greedy(
    problem: StepSolution,
    backend: VerifierBackend,
    *,
    config: EngineConfig | None = None,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    """Single deterministic verification call (temperature 0 by default)."""
    cfg = config or EngineConfig(k=1, q=0, t_max=1, profile=PROFILES["greedy"])
    tpl = templates or default_templates()
    prompt = render_initial(problem, tpl)
    try:
        verdicts, usage, retries = execute_prompts(
            problem, backend, [prompt], cfg.profile.for_round(1), 1, cfg.retry_cap, executor
        )
    except (TransportError, ProtocolError) as exc:
        raise RunError(problem.id, (), exc) from exc
    aggregate = aggregate_round(1, verdicts)
    return RunOutcome(
        prediction=verdicts[0].location,
        rounds_executed=1,
        history=(aggregate,),
        stopped_early=False,
        usage=usage,
        cost_usd=0.0,
        retries=retries,
    )


def run_majority(
    problem: StepSolution,
    backend: VerifierBackend,
    k: int = 5,
    *,
    config: EngineConfig | None = None,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    """K independent verifications, one round, majority vote."""
    cfg = config or EngineConfig()
    cfg = replace(cfg, k=k, q=0, t_max=1)
    return run_temporal_consistency(
        problem, backend, cfg, templates=templates, executor=executor
    )


def run_debate(
    problem: StepSolution,
    backend: VerifierBackend,
    k: int = 5,
    *,
    config: EngineConfig | None = None,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    """Two rounds: independent verification, then cross-agent debate.

    In round two each agent sees the other K-1 agents' round-one reasoning
    (never its own as an "other agent") and answers again; the prediction is
    the round-two majority. Agents whose round-one output was unparseable,
    or who have no valid peers to read, are re-issued the initial prompt.
    """
    if k < 2:
        raise ValueError("debate needs at least two agents")
    cfg = config or EngineConfig()
    tpl = templates or default_templates()
    initial_prompt = render_initial(problem, tpl)
    total_usage = TokenUsage()
    total_retries = 0
    try:
        first, usage, retries = execute_prompts(
            problem,
            backend,
            [initial_prompt] * k,
            cfg.profile.for_round(1),
            1,
            cfg.retry_cap,
            executor,
        )
        total_usage, total_retries = total_usage + usage, total_retries + retries
        history = [aggregate_round(1, first)]
        prompts = []
        for verdict in first:
            others = [
                v
                for v in first
                if v.agent_id != verdict.agent_id and v.location is not INVALID
            ]
            if verdict.location is INVALID or not others:
                prompts.append(initial_prompt)
            else:
                prompts.append(render_debate(problem, verdict, others, tpl))
        second, usage, retries = execute_prompts(
            problem, backend, prompts, cfg.profile.for_round(2), 2, cfg.retry_cap, executor
        )
        total_usage, total_retries = total_usage + usage, total_retries + retries
        history.append(aggregate_round(2, second))
    except (TransportError, ProtocolError) as exc:
        raise RunError(problem.id, tuple(), exc) from exc
    return RunOutcome(
        prediction=history[-1].majority_location,
        rounds_executed=2,
        history=tuple(history),
        stopped_early=False,
        usage=total_usage,
        cost_usd=0.0,
        retries=total_retries,
    )


def run_selfcheck_once(
    problem: StepSolution,
    backend: VerifierBackend,
    k: int = 5,
    *,
    config: EngineConfig | None = None,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    """Ablation: exactly one self-check round, no stopping criteria."""
    cfg = config or EngineConfig()
    tpl = templates or default_templates()
    initial_prompt = render_initial(problem, tpl)
    total_usage = TokenUsage()
    total_retries = 0
    try:
        first, usage, retries = execute_prompts(
            problem,
            backend,
            [initial_prompt] * k,
            cfg.profile.for_round(1),
            1,
            cfg.retry_cap,
            executor,
        )
        total_usage, total_retries = total_usage + usage, total_retries + retries
        prompts = [
            render_self_check(problem, v, tpl)
            if v.location is not INVALID
            else initial_prompt
            for v in first
        ]
        second, usage, retries = execute_prompts(
            problem, backend, prompts, cfg.profile.for_round(2), 2, cfg.retry_cap, executor
        )
        total_usage, total_retries = total_usage + usage, total_retries + retries
    except (TransportError, ProtocolError) as exc:
        raise RunError(problem.id, tuple(), exc) from exc
    history = (aggregate_round(1, first), aggregate_round(2, second))
    return RunOutcome(
        prediction=history[-1].majority_location,
        rounds_executed=2,
        history=history,
        stopped_early=False,
        usage=total_usage,
        cost_usd=0.0,
        retries=total_retries,
    )


def run_ablation(
    problem: StepSolution,
    backend: VerifierBackend,
    kind: StrategyKind,
    config: EngineConfig | None = None,
    *,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    cfg = config or EngineConfig()
    if kind is StrategyKind.TEMPORAL_K1:
        return run_temporal_consistency(
            problem, backend, replace(cfg, k=1), templates=templates, executor=executor
        )
    if kind is StrategyKind.SELFCHECK_ONCE:
        return run_selfcheck_once(
            problem, backend, cfg.k, config=cfg, templates=templates, executor=executor
        )
    raise ValueError(f"{kind} is not an ablation")


def run_strategy(
    problem: StepSolution,
    backend: VerifierBackend,
    kind: StrategyKind,
    config: EngineConfig | None = None,
    *,
    templates: PromptTemplates | None = None,
    executor: Executor | None = None,
) -> RunOutcome:
    """Dispatch one problem to the named strategy."""
    cfg = config or EngineConfig()
    if kind is StrategyKind.GREEDY:
        greedy_cfg = replace(cfg, k=1, q=0, t_max=1, profile=PROFILES["greedy"])
        return run_greedy(
            problem, backend, config=greedy_cfg, templates=templates, executor=executor
        )
    if kind is StrategyKind.MAJORITY:
        return run_majority(
            problem, backend, cfg.k, config=cfg, templates=templates, executor=executor
        )
    if kind is StrategyKind.DEBATE:
        return run_debate(
            problem, backend, cfg.k, config=cfg, templates=templates, executor=executor
        )
    if kind is StrategyKind.TEMPORAL:
        return run_temporal_consistency(
            problem, backend, cfg, templates=templates, executor=executor
        )
    return run_ablation(
        problem, backend, kind, cfg, templates=templates, executor=executor
    )
