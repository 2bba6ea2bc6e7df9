"""JSON-ready results shared by the CLI and the HTTP service.

Both front ends call these functions, so ``retrieve --json`` and
``POST /v1/retrieve`` return identical documents for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .constraints import check_constraints
from .core import PlanRecord, ProtocolSpec, RetrievalConfig, validate_plan, validate_protocol
from .embedding import Embedder
from .knowledge_base import KnowledgeBase, ProtocolIndex, build_indexes
from .orchestrator import ChatBackend, explain_plan
from .retrieval import predict
from .scoring import normalize_plan, percentile_rank


@dataclass
class Engine:
    """A loaded knowledge base with its indexes and providers."""

    kb: KnowledgeBase
    indexes: Mapping[str, ProtocolIndex]
    embedder: Embedder
    config: RetrievalConfig

    @classmethod
    def build(cls, kb: KnowledgeBase, embedder: Embedder, config: RetrievalConfig) -> "Engine":
        return cls(kb, build_indexes(kb, embedder), embedder, config)


def score_payload(plan: PlanRecord, spec: ProtocolSpec, kb: KnowledgeBase | None = None) -> dict:
    spec = validate_protocol(spec)
    validate_plan(plan, spec)
    norm = normalize_plan(plan, spec)
    out = {
        "plan_id": plan.plan_id,
        "protocol": spec.name,
        "normalized": norm.normalized,
        "gm_score": norm.gm_score,
        "percentile": None,
        "cohort_size": None,
    }
    if kb is not None:
        cohort = [e.gm_score for e in kb.entries_for(spec.name)]
        out["cohort_size"] = len(cohort)
        if cohort:
            out["percentile"] = percentile_rank(norm.gm_score, cohort, member=False)
    return out


def retrieve_payload(plan: PlanRecord, engine: Engine, config: RetrievalConfig | None = None) -> dict:
    config = config or engine.config
    result = predict(plan, engine.kb, engine.indexes, config, engine.embedder)
    return {
        "plan_id": plan.plan_id,
        "protocol": plan.protocol_name,
        "config": config.to_dict(),
        **result.to_dict(),
    }


def check_payload(plan: PlanRecord, spec: ProtocolSpec) -> dict:
    report = check_constraints(plan, validate_protocol(spec))
    return {
        "plan_id": plan.plan_id,
        "protocol": spec.name,
        "violated": report.metric_ids,
        **report.to_dict(),
    }


def explain_payload(
    plan: PlanRecord,
    engine: Engine,
    backend: ChatBackend,
    config: RetrievalConfig | None = None,
) -> dict:
    outcome, agreement = explain_plan(
        plan, engine.kb, engine.indexes, config or engine.config, engine.embedder, backend
    )
    return {
        "plan_id": plan.plan_id,
        "summary": outcome.summary_text,
        "outcome": outcome.to_dict(),
        "agreement": agreement.to_dict(),
    }
