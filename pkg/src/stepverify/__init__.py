"""Multi-agent verification of step-by-step math solutions.

Verifier agents repeatedly re-examine their own judgments; a run stops once
the majority location is stable and its support is not shrinking. The
package bundles the verification engine, baseline strategies, benchmark
loaders, scoring/cost tooling, and a CLI.
"""
from .backends import (
    PROFILES,
    ProtocolError,
    RemoteBackend,
    SamplingParams,
    SamplingProfile,
    ScriptedBackend,
    StickyTruthBackend,
    StickyTruthParams,
    TransportError,
    VerifierBackend,
    make_synthetic_problem,
    synthetic_benchmark,
)
from .core import (
    INVALID,
    LocationRangeError,
    RoundAggregate,
    RunOutcome,
    Source,
    StepSolution,
    TokenUsage,
    Verdict,
    validate_location,
)
from .datasets import (
    BenchmarkName,
    BenchmarkSet,
    Difficulty,
    SchemaError,
    build_mathcheck_star,
    difficulty_of,
    load_processbench,
    load_prm800k,
    map_prm800k,
)
from .engine import (
    EngineConfig,
    RunError,
    majority_vote,
    run_temporal_consistency,
    should_stop,
    support_proportion,
)
from .evaluation import (
    CostLedger,
    Metrics,
    MissingPriceError,
    ModelPrice,
    ScoreReport,
    accumulate_cost,
    bootstrap_f1_ci,
    bootstrap_f1_diff_ci,
    f1_harmonic,
    score,
    sweep,
)
from .prompts import (
    ParseError,
    PromptTemplates,
    RenderedPrompt,
    extract_location,
    render_debate,
    render_initial,
    render_self_check,
)
from .strategies import (
    StrategyKind,
    run_ablation,
    run_debate,
    run_greedy,
    run_majority,
    run_strategy,
)

__version__ = "0.1.0"

__all__ = [
    "INVALID",
    "PROFILES",
    "BenchmarkName",
    "BenchmarkSet",
    "CostLedger",
    "Difficulty",
    "EngineConfig",
    "LocationRangeError",
    "Metrics",
    "MissingPriceError",
    "ModelPrice",
    "ParseError",
    "PromptTemplates",
    "ProtocolError",
    "RemoteBackend",
    "RenderedPrompt",
    "RoundAggregate",
    "RunError",
    "RunOutcome",
    "SamplingParams",
    "SamplingProfile",
    "SchemaError",
    "ScoreReport",
    "ScriptedBackend",
    "Source",
    "StepSolution",
    "StickyTruthBackend",
    "StickyTruthParams",
    "StrategyKind",
    "TokenUsage",
    "TransportError",
    "Verdict",
    "VerifierBackend",
    "accumulate_cost",
    "bootstrap_f1_ci",
    "bootstrap_f1_diff_ci",
    "build_mathcheck_star",
    "difficulty_of",
    "extract_location",
    "f1_harmonic",
    "load_processbench",
    "load_prm800k",
    "majority_vote",
    "make_synthetic_problem",
    "map_prm800k",
    "render_debate",
    "render_initial",
    "render_self_check",
    "run_ablation",
    "run_debate",
    "run_greedy",
    "run_majority",
    "run_strategy",
    "run_temporal_consistency",
    "score",
    "should_stop",
    "support_proportion",
    "sweep",
    "synthetic_benchmark",
    "validate_location",
]
