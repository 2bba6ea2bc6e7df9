"""Protocol-aware radiotherapy plan scoring and similarity retrieval."""

from .constraints import check_constraints
from .core import (
    ConstraintSpec,
    KBEntry,
    MetricKind,
    Neighbor,
    PlanRecord,
    PredictionResult,
    ProtocolSpec,
    RetrievalConfig,
    Violation,
    ViolationReport,
    validate_plan,
    validate_protocol,
)
from .embedding import HashingEmbedder, RemoteEmbedder, cosine_similarity, fallback_embed
from .errors import PlanScoreError
from .estimator import PercentileRetriever, PlanScorer
from .knowledge_base import KnowledgeBase, build_indexes, build_kb, load_kb, save_kb
from .metrics import EvaluationReport, evaluate_system
from .orchestrator import explain_plan, run_session, scripted_mock_backend, verify_consistency
from .retrieval import predict
from .scoring import geometric_mean, normalize_plan, percentile_rank, score_cohort
from .synth import SynthConfig, generate
from .tuner import gp_minimize, tune_retrieval

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec",
    "EvaluationReport",
    "HashingEmbedder",
    "KBEntry",
    "KnowledgeBase",
    "MetricKind",
    "Neighbor",
    "PercentileRetriever",
    "PlanRecord",
    "PlanScoreError",
    "PlanScorer",
    "PredictionResult",
    "ProtocolSpec",
    "RemoteEmbedder",
    "RetrievalConfig",
    "SynthConfig",
    "Violation",
    "ViolationReport",
    "build_indexes",
    "build_kb",
    "check_constraints",
    "cosine_similarity",
    "evaluate_system",
    "explain_plan",
    "fallback_embed",
    "generate",
    "geometric_mean",
    "gp_minimize",
    "load_kb",
    "normalize_plan",
    "percentile_rank",
    "predict",
    "run_session",
    "save_kb",
    "score_cohort",
    "scripted_mock_backend",
    "tune_retrieval",
    "validate_plan",
    "validate_protocol",
    "verify_consistency",
]
