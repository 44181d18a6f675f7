"""Declarative run configuration.

One INI-style file drives a run, with four sections:

    [backend]   kind = remote | scripted | sticky, plus kind-specific keys
    [engine]    k, q, t, retry_cap, concurrency
    [pricing]   one key per model: "prompt_usd, completion_usd" per 1M tokens
    [dataset]   kind = processbench | mathcheck-star | prm800k | canonical |
                synthetic, plus paths / sample settings

Every value can be overridden by a CLI flag; flags win over the file.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .backends import (
    PROFILES,
    RemoteBackend,
    ScriptedBackend,
    StickyTruthBackend,
    StickyTruthParams,
    VerifierBackend,
    synthetic_benchmark,
)
from .core import StepSolution
from .datasets import (
    BenchmarkName,
    BenchmarkSet,
    build_mathcheck_star,
    load_adapter,
    load_canonical,
    load_processbench,
    load_prm800k,
)
from .engine import EngineConfig
from .evaluation import ModelPrice


class ConfigError(ValueError):
    """The config file is malformed or internally inconsistent."""


@dataclass
class BackendSettings:
    kind: str = "sticky"
    # remote
    base_url: str = ""
    model: str = "sticky-truth"
    api_key_env: str = ""
    timeout: float = 120.0
    max_attempts: int = 5
    backoff_base: float = 0.5
    # scripted
    scripts_path: str = ""
    # sticky
    p_correct_init: float = 0.4
    keep_correct: float = 0.95
    keep_wrong: float = 0.6
    repair: float = 0.5
    seed: int = 0


@dataclass
class EngineSettings:
    k: int = 5
    q: int = 3
    t: int = 10
    retry_cap: int = 2
    concurrency: int = 1
    profile: str = "closed-source"


@dataclass
class DatasetSettings:
    kind: str = "synthetic"
    path: str = ""
    processbench_path: str = ""
    adapter: str = ""
    limit: int | None = None
    sample_size: int = 300
    sample_seed: int = 42
    n_problems: int = 100
    n_steps: int = 6
    seed: int = 0


@dataclass
class AppConfig:
    backend: BackendSettings = field(default_factory=BackendSettings)
    engine: EngineSettings = field(default_factory=EngineSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    pricing: dict[str, ModelPrice] = field(default_factory=dict)

    # -- parsing ------------------------------------------------------------

    @classmethod
    def load(cls, path: str | Path) -> "AppConfig":
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file {path} not found")
        config = cls()
        _apply_section(parser, "backend", config.backend)
        _apply_section(parser, "engine", config.engine)
        _apply_section(parser, "dataset", config.dataset)
        if parser.has_section("pricing"):
            for model, value in parser.items("pricing"):
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 2:
                    raise ConfigError(
                        f"pricing for {model!r} must be 'prompt_usd, completion_usd'"
                    )
                try:
                    config.pricing[model] = ModelPrice(float(parts[0]), float(parts[1]))
                except ValueError as exc:
                    raise ConfigError(f"pricing for {model!r}: {exc}") from exc
        config.validate()
        return config

    def validate(self) -> None:
        if self.backend.kind not in ("remote", "scripted", "sticky"):
            raise ConfigError(f"unknown backend kind {self.backend.kind!r}")
        if self.engine.profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {self.engine.profile!r}; choose from {sorted(PROFILES)}"
            )
        if self.dataset.kind not in (
            "processbench",
            "mathcheck-star",
            "prm800k",
            "canonical",
            "synthetic",
        ):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.backend.kind == "remote" and not self.backend.base_url:
            raise ConfigError("remote backend needs base_url")
        if self.backend.kind == "scripted" and not self.backend.scripts_path:
            raise ConfigError("scripted backend needs scripts_path")

    # -- factories ----------------------------------------------------------

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            k=self.engine.k,
            q=self.engine.q,
            t_max=self.engine.t,
            retry_cap=self.engine.retry_cap,
            profile=PROFILES[self.engine.profile],
        )

    def backend_factory(
        self, *, trace: bool = False
    ) -> Callable[[StepSolution], VerifierBackend]:
        """Build the per-problem backend constructor.

        Remote and scripted backends are shared instances; the sticky
        simulator gets a fresh instance per problem with a seed derived from
        (base seed, problem id), so results are independent of problem order
        and identical across config rows that share the seed.
        """
        settings = self.backend
        if settings.kind == "remote":
            api_key = os.environ.get(settings.api_key_env) if settings.api_key_env else None
            shared: VerifierBackend = RemoteBackend(
                settings.base_url,
                settings.model,
                api_key=api_key,
                timeout=settings.timeout,
                max_attempts=settings.max_attempts,
                backoff_base=settings.backoff_base,
                trace=trace,
            )
            return lambda problem: shared
        if settings.kind == "scripted":
            raw = json.loads(Path(settings.scripts_path).read_text(encoding="utf-8"))
            scripts = {int(agent): list(lines) for agent, lines in raw.items()}
            shared = ScriptedBackend(scripts)
            return lambda problem: shared
        params = StickyTruthParams(
            p_correct_init=settings.p_correct_init,
            keep_correct=settings.keep_correct,
            keep_wrong=settings.keep_wrong,
            repair=settings.repair,
        )
        base_seed = settings.seed

        def make(problem: StepSolution) -> VerifierBackend:
            return StickyTruthBackend(params, derive_seed(base_seed, problem.id))

        return make

    def load_benchmark(self) -> BenchmarkSet:
        ds = self.dataset
        adapter = load_adapter(ds.adapter) if ds.adapter else None
        if ds.kind == "synthetic":
            problems = synthetic_benchmark(ds.n_problems, n_steps=ds.n_steps, seed=ds.seed)
            benchmark = BenchmarkSet(BenchmarkName.SYNTHETIC, tuple(problems))
        elif ds.kind == "processbench":
            benchmark = load_processbench(_require(ds.path, "dataset.path"), adapter=adapter)
        elif ds.kind == "mathcheck-star":
            benchmark = build_mathcheck_star(
                _require(ds.path, "dataset.path"),
                _require(ds.processbench_path, "dataset.processbench_path"),
                mathcheck_adapter=adapter,
            )
        elif ds.kind == "prm800k":
            benchmark = load_prm800k(
                _require(ds.path, "dataset.path"),
                sample_size=ds.sample_size,
                seed=ds.sample_seed,
                adapter=adapter,
            )
        else:
            benchmark = load_canonical(_require(ds.path, "dataset.path"))
        return benchmark.limited(ds.limit)

    def price_for(self, model: str) -> ModelPrice | None:
        return self.pricing.get(model)

    def to_dict(self) -> dict[str, Any]:
        """Resolved snapshot for the run manifest (never includes secrets)."""
        return {
            "backend": {
                "kind": self.backend.kind,
                "model": self.backend.model,
                "base_url": self.backend.base_url,
                "api_key_env": self.backend.api_key_env,
                "scripts_path": self.backend.scripts_path,
                "sticky": {
                    "p_correct_init": self.backend.p_correct_init,
                    "keep_correct": self.backend.keep_correct,
                    "keep_wrong": self.backend.keep_wrong,
                    "repair": self.backend.repair,
                    "seed": self.backend.seed,
                },
            },
            "engine": {
                "k": self.engine.k,
                "q": self.engine.q,
                "t": self.engine.t,
                "retry_cap": self.engine.retry_cap,
                "concurrency": self.engine.concurrency,
                "profile": self.engine.profile,
            },
            "dataset": {
                "kind": self.dataset.kind,
                "path": self.dataset.path,
                "processbench_path": self.dataset.processbench_path,
                "limit": self.dataset.limit,
                "sample_size": self.dataset.sample_size,
                "sample_seed": self.dataset.sample_seed,
                "n_problems": self.dataset.n_problems,
                "n_steps": self.dataset.n_steps,
                "seed": self.dataset.seed,
            },
            "pricing": {
                model: [p.prompt_usd_per_million, p.completion_usd_per_million]
                for model, p in sorted(self.pricing.items())
            },
        }


    @classmethod
    def from_dict(cls, snapshot: Mapping[str, Any]) -> "AppConfig":
        """Rebuild a config from a manifest snapshot (inverse of to_dict)."""
        config = cls()
        backend = snapshot.get("backend", {})
        for key in ("kind", "model", "base_url", "api_key_env", "scripts_path"):
            if key in backend:
                setattr(config.backend, key, backend[key])
        sticky = backend.get("sticky", {})
        for key in ("p_correct_init", "keep_correct", "keep_wrong", "repair", "seed"):
            if key in sticky:
                setattr(config.backend, key, sticky[key])
        engine = snapshot.get("engine", {})
        for key in ("k", "q", "t", "retry_cap", "concurrency", "profile"):
            if key in engine:
                setattr(config.engine, key, engine[key])
        dataset = snapshot.get("dataset", {})
        for key in (
            "kind",
            "path",
            "processbench_path",
            "limit",
            "sample_size",
            "sample_seed",
            "n_problems",
            "n_steps",
            "seed",
        ):
            if key in dataset:
                setattr(config.dataset, key, dataset[key])
        for model, pair in snapshot.get("pricing", {}).items():
            config.pricing[model] = ModelPrice(float(pair[0]), float(pair[1]))
        config.validate()
        return config


def derive_seed(base_seed: int, problem_id: str) -> int:
    """Stable per-problem seed, independent of benchmark order."""
    digest = hashlib.sha256(f"{base_seed}:{problem_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _require(value: str, name: str) -> str:
    if not value:
        raise ConfigError(f"{name} is required for this dataset kind")
    return value


def _apply_section(parser: configparser.ConfigParser, section: str, target: Any) -> None:
    if not parser.has_section(section):
        return
    for key, value in parser.items(section):
        if not hasattr(target, key):
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        current = getattr(target, key)
        try:
            if isinstance(current, bool):
                parsed: Any = value.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            elif current is None:
                # The only optional field (dataset.limit) is an integer.
                parsed = int(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
        setattr(target, key, parsed)
