"""Voting, stopping, retries, and the round loop of the verification engine."""
from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import pytest

from stepverify.backends import (
    PROFILES,
    ProtocolError,
    SamplingParams,
    StickyTruthBackend,
    StickyTruthParams,
    VerifierBackend,
    make_synthetic_problem,
)
from stepverify.core import INVALID, RoundAggregate, TokenUsage
from stepverify.engine import (
    EngineConfig,
    RunError,
    aggregate_round,
    build_run_record,
    majority_vote,
    request_verdict,
    run_temporal_consistency,
    should_stop,
    support_proportion,
)
from stepverify.prompts import TemplateKind, render_initial

from conftest import RecordingBackend, boxed, make_problem, scripted


def oracle_majority(locations) -> int | None:
    """Brute-force reference: count every valid location, max count, min tie-break."""
    valid = [loc for loc in locations if loc is not None]
    if not valid:
        return None
    best = max(Counter(valid).values())
    return min(loc for loc in set(valid) if valid.count(loc) == best)


def test_majority_vote_examples() -> None:
    assert majority_vote([3, 3, -1, 3, 2]) == 3
    assert majority_vote([None, 2, None]) == 2
    assert majority_vote([None, None]) is INVALID
    assert majority_vote([1, 2]) == 1
    assert majority_vote([2, 1]) == 1
    assert majority_vote([-1, 4, -1, 4]) == -1
    with pytest.raises(ValueError):
        majority_vote([])


def test_majority_vote_matches_oracle_on_seeded_vectors() -> None:
    rng = random.Random(2024)
    pool = [None, -1, 0, 1, 2, 3, 4, 5]
    for _ in range(500):
        votes = [rng.choice(pool) for _ in range(rng.randint(1, 7))]
        assert majority_vote(votes) == oracle_majority(votes)


def test_support_proportion_is_exact() -> None:
    assert support_proportion([3, 3, -1, 3, 2], 3) == Fraction(3, 5)
    assert support_proportion([2], 2) == Fraction(1)
    assert support_proportion([None, 2, None], 2) == Fraction(1, 3)
    assert support_proportion([None, None], INVALID) == Fraction(0)
    with pytest.raises(ValueError):
        support_proportion([], 1)


def agg(round: int, majority: int | None, support: Fraction) -> RoundAggregate:
    return RoundAggregate(
        round=round, majority_location=majority, support=support, verdicts=()
    )


def history_of(majorities, supports) -> list[RoundAggregate]:
    return [
        agg(i + 1, m, s) for i, (m, s) in enumerate(zip(majorities, supports))
    ]


def test_should_stop_hand_traces() -> None:
    fifths = [Fraction(3, 5), Fraction(4, 5), Fraction(5, 5)]
    assert should_stop(history_of([3, 3, 3], fifths), q=3) is True
    dip = [Fraction(3, 5), Fraction(4, 5), Fraction(3, 5)]
    assert should_stop(history_of([3, 3, 3], dip), q=3) is False
    assert should_stop(history_of([2, 3, 3], fifths), q=3) is False


def test_should_stop_never_fires_before_round_two() -> None:
    one_round = history_of([4], [Fraction(1)])
    for q in range(0, 4):
        assert should_stop(one_round, q=q) is False
    two_rounds = history_of([4, 1], [Fraction(1), Fraction(1)])
    assert should_stop(two_rounds, q=0) is True
    assert should_stop(two_rounds, q=1) is True


def test_should_stop_window_shorter_than_q() -> None:
    perfect = history_of([2, 2], [Fraction(1), Fraction(1)])
    assert should_stop(perfect, q=3) is False


def test_should_stop_accepts_equal_supports() -> None:
    flat = history_of([1, 1], [Fraction(2, 4), Fraction(2, 4)])
    assert should_stop(flat, q=2) is True
    falling = history_of([1, 1], [Fraction(3, 4), Fraction(2, 4)])
    assert should_stop(falling, q=2) is False


def test_should_stop_ignores_support_dips_before_the_window() -> None:
    majorities = [2, 2, 2]
    supports = [Fraction(5, 5), Fraction(3, 5), Fraction(3, 5)]
    history = history_of(majorities, supports)
    assert should_stop(history[:2], q=2) is False
    assert should_stop(history, q=2) is True


def test_should_stop_invalid_majority_is_never_stable() -> None:
    history = history_of([None, None], [Fraction(0), Fraction(0)])
    assert should_stop(history, q=2) is False
    mixed = history_of([None, 3], [Fraction(0), Fraction(2, 3)])
    assert should_stop(mixed, q=2) is False


def test_engine_config_validation() -> None:
    defaults = EngineConfig()
    assert (defaults.k, defaults.q, defaults.t_max, defaults.retry_cap) == (5, 3, 10, 2)
    assert defaults.profile is PROFILES["closed-source"]
    with pytest.raises(ValueError, match="k"):
        EngineConfig(k=0)
    with pytest.raises(ValueError, match="q"):
        EngineConfig(q=-1)
    with pytest.raises(ValueError, match="t_max"):
        EngineConfig(t_max=0)
    with pytest.raises(ValueError, match="q cannot exceed"):
        EngineConfig(q=5, t_max=4)
    with pytest.raises(ValueError, match="retry_cap"):
        EngineConfig(retry_cap=-1)


class _PerCallBackend(VerifierBackend):
    """Returns one scripted text per generate() call, across rounds and retries."""

    model = "per-call"

    def __init__(self, texts: list[str]) -> None:
        self._texts = texts
        self.calls = 0

    def generate(self, prompt, params, agent_id, round):
        text = self._texts[self.calls]
        self.calls += 1
        return text, TokenUsage(prompt_tokens=5, completion_tokens=3)


def test_request_verdict_retries_until_parseable() -> None:
    problem = make_problem()
    backend = _PerCallBackend(["no answer given", boxed(2)])
    params = SamplingParams(temperature=0.0)
    verdict, total, retries = request_verdict(
        problem, backend, render_initial(problem), params, 1, 1, retry_cap=2
    )
    assert verdict.location == 2
    assert retries == 1
    assert backend.calls == 2
    assert total == TokenUsage(prompt_tokens=10, completion_tokens=6)
    assert verdict.usage == TokenUsage(prompt_tokens=5, completion_tokens=3)


def test_request_verdict_exhausts_retries_to_invalid() -> None:
    problem = make_problem()
    backend = _PerCallBackend(["a", "b", "c"])
    params = SamplingParams(temperature=0.0)
    verdict, total, retries = request_verdict(
        problem, backend, render_initial(problem), params, 1, 1, retry_cap=2
    )
    assert verdict.location is INVALID
    assert verdict.reasoning == "c"
    assert retries == 2
    assert backend.calls == 3
    assert total == TokenUsage(prompt_tokens=15, completion_tokens=9)


def test_request_verdict_zero_retry_cap() -> None:
    problem = make_problem()
    backend = _PerCallBackend(["nothing boxed"])
    verdict, _, retries = request_verdict(
        problem,
        backend,
        render_initial(problem),
        SamplingParams(temperature=0.0),
        1,
        1,
        retry_cap=0,
    )
    assert verdict.location is INVALID
    assert retries == 0
    assert backend.calls == 1


def test_out_of_range_location_also_retries() -> None:
    problem = make_problem(n_steps=6)
    backend = _PerCallBackend(["\\boxed{99}", boxed(0)])
    verdict, _, retries = request_verdict(
        problem,
        backend,
        render_initial(problem),
        SamplingParams(temperature=0.0),
        1,
        1,
        retry_cap=1,
    )
    assert verdict.location == 0
    assert retries == 1


def test_invalid_agents_get_the_initial_prompt_again() -> None:
    problem = make_problem()
    inner = scripted({1: ["round one, no box", "round two, no box", 2]})
    backend = RecordingBackend(inner)
    config = EngineConfig(k=1, q=2, t_max=3, retry_cap=0)
    outcome = run_temporal_consistency(problem, backend, config)
    assert outcome.prediction == 2
    assert outcome.rounds_executed == 3
    assert outcome.stopped_early is False
    kinds = [(agent, round, prompt.template_id) for agent, round, prompt in backend.seen]
    assert kinds == [
        (1, 1, TemplateKind.INITIAL),
        (1, 2, TemplateKind.INITIAL),
        (1, 3, TemplateKind.INITIAL),
    ]


def test_valid_agents_get_self_check_prompts_with_their_own_verdict() -> None:
    problem = make_problem()
    inner = scripted({1: [3, 3], 2: [1, 3]})
    backend = RecordingBackend(inner)
    outcome = run_temporal_consistency(
        problem, backend, EngineConfig(k=2, q=1, t_max=2)
    )
    assert outcome.prediction == 3
    assert outcome.stopped_early is True
    round_two = [entry for entry in backend.seen if entry[1] == 2]
    for agent_id, _, prompt in round_two:
        assert prompt.template_id is TemplateKind.SELF_CHECK
        expected_own = 3 if agent_id == 1 else 1
        assert f"[First Verifier's Label]\n\n{expected_own}" in prompt.messages[0].content


def test_q_zero_runs_exactly_one_round() -> None:
    backend = scripted({1: [2], 2: [2], 3: [0]})
    outcome = run_temporal_consistency(
        make_problem(), backend, EngineConfig(k=3, q=0, t_max=10)
    )
    assert outcome.prediction == 2
    assert outcome.rounds_executed == 1
    assert outcome.stopped_early is False
    assert outcome.history[0].support == Fraction(2, 3)


def test_run_error_carries_partial_history() -> None:
    backend = scripted({1: [2], 2: [2]})
    config = EngineConfig(k=2, q=2, t_max=3)
    with pytest.raises(RunError) as excinfo:
        run_temporal_consistency(make_problem(id="frag-9"), backend, config)
    error = excinfo.value
    assert error.problem_id == "frag-9"
    assert len(error.history) == 1
    assert error.history[0].majority_location == 2
    assert isinstance(error.cause, ProtocolError)
    assert "frag-9" in str(error)


def test_round_loop_is_executor_invariant() -> None:
    params = StickyTruthParams(0.4, 0.95, 0.6, 0.5)
    problem = make_synthetic_problem(12, 6, 4)
    config = EngineConfig(k=5, q=3, t_max=10)

    def run(executor):
        backend = StickyTruthBackend(params, rng_seed=99)
        return run_temporal_consistency(problem, backend, config, executor=executor)

    sequential = run(None)
    with ThreadPoolExecutor(max_workers=2) as pool:
        narrow = run(pool)
    with ThreadPoolExecutor(max_workers=8) as pool:
        wide = run(pool)
    assert sequential == narrow == wide


def test_aggregate_round_orders_and_counts() -> None:
    backend = scripted({1: [1], 2: [4], 3: [1]})
    outcome = run_temporal_consistency(
        make_problem(), backend, EngineConfig(k=3, q=0, t_max=1)
    )
    verdicts = outcome.history[0].verdicts
    assert [v.agent_id for v in verdicts] == [1, 2, 3]
    assert [v.location for v in verdicts] == [1, 4, 1]
    rebuilt = aggregate_round(1, verdicts)
    assert rebuilt.majority_location == 1
    assert rebuilt.support == Fraction(2, 3)


def test_build_run_record_shape() -> None:
    backend = scripted({1: [2, 2], 2: [2, 2]})
    problem = make_problem(id="rec-1", label=2)
    outcome = run_temporal_consistency(
        problem, backend, EngineConfig(k=2, q=1, t_max=4)
    )
    record = build_run_record(
        problem,
        outcome,
        strategy="temporal",
        model="scripted",
        config={"k": 2, "q": 1, "t_max": 4},
    )
    assert record["problem_id"] == "rec-1"
    assert record["prediction"] == 2
    assert record["stopped_early"] is True
    assert record["rounds_executed"] == 2
    # Fraction(2, 2) normalizes, so unanimous support serializes as 1/1.
    assert record["rounds"][0]["support"] == "1/1"
    first_verdict = record["rounds"][0]["verdicts"][0]
    digest = first_verdict["reasoning_sha256"]
    assert len(digest) == 64 and set(digest) <= set("0123456789abcdef")
    assert digest == hashlib.sha256(boxed(2).encode("utf-8")).hexdigest()
    json.dumps(record)
