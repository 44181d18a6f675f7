"""Verifier backends: one real HTTP client and two simulators.

Every backend exposes the same generate() call so the engine never knows
whether text came from a remote model, a scripted fixture, or the sticky
Markov simulator. Simulators must stay bit-reproducible under a fixed seed
no matter how calls interleave across threads, which is why the sticky
backend derives an independent random stream per agent instead of sharing
one generator.
"""
from __future__ import annotations

import json
import logging
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import requests

from .core import Source, StepSolution, TokenUsage
from .prompts import RenderedPrompt, TemplateKind

logger = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """Network-level failure (timeouts, connection resets, 429/5xx)."""


class ProtocolError(RuntimeError):
    """The backend answered, but not in the shape the wire contract promises."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float
    top_p: float | None = None
    top_k: int | None = None
    seed: int | None = None
    max_tokens: int = 4096


@dataclass(frozen=True)
class SamplingProfile:
    """Per-round sampling: round 1 uses initial, rounds >= 2 use subsequent."""

    name: str
    initial: SamplingParams
    subsequent: SamplingParams

    def for_round(self, round: int) -> SamplingParams:
        return self.initial if round == 1 else self.subsequent


# Round 1 always samples at 0.7. Later rounds go to 1.0 against hosted
# closed-weights APIs; self-hosted open-weights runs keep 0.7 with nucleus
# and top-k limits plus a fixed seed. The greedy profile decodes at 0.
PROFILES: dict[str, SamplingProfile] = {
    "closed-source": SamplingProfile(
        name="closed-source",
        initial=SamplingParams(temperature=0.7),
        subsequent=SamplingParams(temperature=1.0),
    ),
    "open-source": SamplingProfile(
        name="open-source",
        initial=SamplingParams(temperature=0.7, seed=42),
        subsequent=SamplingParams(temperature=0.7, top_p=0.8, top_k=40, seed=42),
    ),
    "greedy": SamplingProfile(
        name="greedy",
        initial=SamplingParams(temperature=0.0),
        subsequent=SamplingParams(temperature=0.0),
    ),
}


class VerifierBackend(ABC):
    """Uniform text-generation interface used by every strategy."""

    model: str = "unknown"

    @abstractmethod
    def generate(
        self,
        prompt: RenderedPrompt,
        params: SamplingParams,
        agent_id: int,
        round: int,
    ) -> tuple[str, TokenUsage]:
        """Return (generated text, token usage) for one agent call."""


def _synthetic_usage(prompt: RenderedPrompt, text: str) -> TokenUsage:
    # Simulators report word counts; only determinism matters, not fidelity.
    return TokenUsage(
        prompt_tokens=sum(len(m.content.split()) for m in prompt.messages),
        completion_tokens=len(text.split()),
    )


class ScriptedBackend(VerifierBackend):
    """Replays fixed texts: scripts[agent_id][round - 1].

    Every call for a given (agent, round) returns the same entry, so parse
    retries re-read it; a round past the end of an agent's script is a
    ProtocolError, which keeps fixtures honest about expected call depth.
    """

    model = "scripted"

    def __init__(self, scripts: Mapping[int, Sequence[str]]) -> None:
        self._scripts = {agent: list(lines) for agent, lines in scripts.items()}

    def generate(
        self,
        prompt: RenderedPrompt,
        params: SamplingParams,
        agent_id: int,
        round: int,
    ) -> tuple[str, TokenUsage]:
        script = self._scripts.get(agent_id)
        if script is None:
            raise ProtocolError(f"no script for agent {agent_id}")
        if round > len(script):
            raise ProtocolError(
                f"script for agent {agent_id} exhausted at round {round}"
            )
        text = script[round - 1]
        return text, _synthetic_usage(prompt, text)


@dataclass(frozen=True)
class StickyTruthParams:
    """Markov dynamics for the simulated verifier population.

    p_correct_init: chance the first answer hits the true location.
    keep_correct / keep_wrong: chance a re-examined answer is kept.
    repair: chance a changed wrong answer lands on the truth.
    """

    p_correct_init: float
    keep_correct: float
    keep_wrong: float
    repair: float

    def __post_init__(self) -> None:
        for name in ("p_correct_init", "keep_correct", "keep_wrong", "repair"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


_TRUTH_MARKER = re.compile(r"\[truth=(-?\d+) n=(\d+)\]")
_PREV_LABEL = re.compile(r"\[First Verifier's Label\]\s*\n\s*(-?\d+)")
_BOXED = re.compile(r"\\boxed\{(-?\d+)\}")


def make_synthetic_problem(index: int, n_steps: int, label: int) -> StepSolution:
    """Build a solution whose problem text encodes the ground truth.

    StickyTruthBackend reads the marker back out of the rendered prompt, so
    the simulator only ever sees what a real model would see.
    """
    return StepSolution(
        id=f"syn-{index:05d}",
        source=Source.GSM8K,
        problem=f"Synthetic verification target {index}. [truth={label} n={n_steps}]",
        steps=tuple(f"step {i} of synthetic problem {index}" for i in range(n_steps)),
        label=label,
    )


def synthetic_benchmark(
    n_problems: int, *, n_steps: int = 6, seed: int = 0
) -> list[StepSolution]:
    """Alternating correct/erroneous synthetic problems, seeded error indices."""
    rng = np.random.default_rng(seed)
    problems = []
    for i in range(n_problems):
        if i % 2 == 0:
            label = -1
        else:
            label = int(rng.integers(0, n_steps))
        problems.append(make_synthetic_problem(i, n_steps, label))
    return problems


class StickyTruthBackend(VerifierBackend):
    """Simulated verifier with sticky answers and a pull toward the truth.

    Each agent owns an independent random stream derived from
    (rng_seed, agent_id), so outcomes do not depend on how calls from
    different agents interleave. One instance expects at most one in-flight
    call per agent at a time (the engine's round loop guarantees this).
    """

    model = "sticky-truth"

    def __init__(self, params: StickyTruthParams, rng_seed: int) -> None:
        self.params = params
        self._seed = rng_seed
        self._rngs: dict[int, np.random.Generator] = {}
        self._lock = threading.Lock()

    def _stream(self, agent_id: int) -> np.random.Generator:
        with self._lock:
            rng = self._rngs.get(agent_id)
            if rng is None:
                seq = np.random.SeedSequence(entropy=self._seed, spawn_key=(agent_id,))
                rng = np.random.default_rng(seq)
                self._rngs[agent_id] = rng
            return rng

    @staticmethod
    def _read_truth(prompt: RenderedPrompt) -> tuple[int, int]:
        match = _TRUTH_MARKER.search(prompt.messages[0].content)
        if match is None:
            raise ProtocolError(
                "sticky-truth backend needs problems built by make_synthetic_problem"
            )
        return int(match.group(1)), int(match.group(2))

    @staticmethod
    def _read_previous(prompt: RenderedPrompt) -> int:
        if prompt.template_id is TemplateKind.SELF_CHECK:
            match = _PREV_LABEL.search(prompt.messages[0].content)
            if match is not None:
                return int(match.group(1))
            raise ProtocolError("self-check prompt does not embed the previous label")
        # Debate: the agent's own first answer is the assistant turn.
        for message in prompt.messages:
            if message.role.value == "assistant":
                boxed = _BOXED.findall(message.content)
                if boxed:
                    return int(boxed[-1])
        raise ProtocolError("debate prompt does not embed the agent's own answer")

    def _choose(self, rng: np.random.Generator, candidates: list[int]) -> int:
        return candidates[int(rng.integers(0, len(candidates)))]

    def generate(
        self,
        prompt: RenderedPrompt,
        params: SamplingParams,
        agent_id: int,
        round: int,
    ) -> tuple[str, TokenUsage]:
        rng = self._stream(agent_id)
        truth, n_steps = self._read_truth(prompt)
        labels = list(range(-1, n_steps))
        if prompt.template_id is TemplateKind.INITIAL:
            if rng.random() < self.params.p_correct_init:
                location = truth
            else:
                location = self._choose(rng, [l for l in labels if l != truth])
        else:
            previous = self._read_previous(prompt)
            if previous == truth:
                if rng.random() < self.params.keep_correct:
                    location = previous
                else:
                    location = self._choose(rng, [l for l in labels if l != truth])
            elif rng.random() < self.params.keep_wrong:
                location = previous
            elif rng.random() < self.params.repair:
                location = truth
            else:
                candidates = [l for l in labels if l not in (previous, truth)]
                location = self._choose(rng, candidates) if candidates else truth
        text = f"Checked step by step; earliest issue index is \\boxed{{{location}}}."
        return text, _synthetic_usage(prompt, text)


class RemoteBackend(VerifierBackend):
    """Chat-completions client for any OpenAI-compatible endpoint.

    Transport failures (connection errors, timeouts, HTTP 429/5xx) retry
    with exponential backoff up to max_attempts; malformed responses are
    ProtocolErrors and never retried. Request bodies are serialized with
    sorted keys so identical inputs produce identical bytes.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        trace: bool = False,
        session: requests.Session | None = None,
    ) -> None:
        if max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        self._base_url = base_url
        self.model = model
        self._api_key = api_key
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._trace = trace
        self._session = session or requests.Session()

    def request_body(self, prompt: RenderedPrompt, params: SamplingParams) -> str:
        body: dict = {
            "model": self.model,
            "messages": [
                {"role": m.role.value, "content": m.content} for m in prompt.messages
            ],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.top_p is not None:
            body["top_p"] = params.top_p
        if params.top_k is not None:
            body["top_k"] = params.top_k
        if params.seed is not None:
            body["seed"] = params.seed
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def generate(
        self,
        prompt: RenderedPrompt,
        params: SamplingParams,
        agent_id: int,
        round: int,
    ) -> tuple[str, TokenUsage]:
        payload = self.request_body(prompt, params)
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        if self._trace:
            logger.info("request agent=%d round=%d body=%s", agent_id, round, payload)
        last_error: TransportError | None = None
        for attempt in range(self._max_attempts):
            if attempt > 0:
                time.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    self._base_url, data=payload, headers=headers, timeout=self._timeout
                )
            except requests.RequestException as exc:
                last_error = TransportError(f"request failed: {exc}")
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code}")
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"HTTP {response.status_code}: {response.text[:200]}"
                )
            if self._trace:
                logger.info(
                    "response agent=%d round=%d body=%s", agent_id, round, response.text
                )
            return self._parse_response(response.text)
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse_response(raw: str) -> tuple[str, TokenUsage]:
        try:
            payload = json.loads(raw)
            text = payload["choices"][0]["message"]["content"]
            usage = payload["usage"]
            counts = TokenUsage(
                prompt_tokens=int(usage["prompt_tokens"]),
                completion_tokens=int(usage["completion_tokens"]),
            )
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion response: {exc}") from exc
        if not isinstance(text, str):
            raise ProtocolError("completion content is not a string")
        return text, counts
