"""scikit-learn compatible wrappers around scoring and retrieval.

``X`` is a sequence of :class:`~planscore.core.PlanRecord` (or plain dicts in
the plan-file schema), so the estimators work with ``clone``,
``get_params``/``set_params`` and ``cross_val_score``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import KBEntry, PlanRecord, ProtocolSpec, RetrievalConfig, validate_plan, validate_protocol
from .embedding import HashingEmbedder
from .errors import LengthMismatch, UnknownProtocol
from .knowledge_base import KnowledgeBase, build_indexes
from .retrieval import predict
from .scoring import SortedCohort, normalize_plan, score_cohort

AGGREGATIONS = {
    "nearest_neighbor": "nn_percentile",
    "weighted_average": "weighted_avg_percentile",
    "weighted_median": "weighted_median_percentile",
}


def check_plans(X: Iterable) -> list[PlanRecord]:
    """Coerce ``X`` to a list of plan records."""
    if isinstance(X, (PlanRecord, dict)):
        raise TypeError("X must be a sequence of plans, not a single plan")
    plans = [x if isinstance(x, PlanRecord) else PlanRecord.from_dict(x) for x in X]
    if not plans:
        raise ValueError("X contains no plans")
    return plans


def check_protocols(protocols) -> dict[str, ProtocolSpec]:
    if not protocols:
        raise ValueError("at least one protocol is required")
    specs = [p if isinstance(p, ProtocolSpec) else ProtocolSpec.from_dict(p) for p in protocols]
    return {s.name: validate_protocol(s) for s in specs}


def _group(plans: Sequence[PlanRecord], specs: dict[str, ProtocolSpec]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, plan in enumerate(plans):
        spec = specs.get(plan.protocol_name)
        if spec is None:
            raise UnknownProtocol(f"plan {plan.plan_id!r} references unknown protocol {plan.protocol_name!r}")
        validate_plan(plan, spec)
        groups.setdefault(plan.protocol_name, []).append(i)
    return groups


class PlanScorer(TransformerMixin, BaseEstimator):
    """Learns per-protocol gm-score cohorts; transforms plans to ``[gm_score, percentile]``.

    Percentiles from :meth:`transform` rank each plan as if inserted into the
    fitted cohort. :meth:`fit_transform` instead ranks the fitted plans as
    members of their own cohort.
    """

    def __init__(self, protocols=None):
        self.protocols = protocols

    def fit(self, X, y=None):
        plans = check_plans(X)
        self.protocols_ = check_protocols(self.protocols)
        groups = _group(plans, self.protocols_)
        self.cohorts_ = {
            name: SortedCohort([normalize_plan(plans[i], self.protocols_[name]).gm_score for i in idx])
            for name, idx in groups.items()
        }
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "cohorts_")
        plans = check_plans(X)
        _group(plans, self.protocols_)
        out = np.empty((len(plans), 2))
        for i, plan in enumerate(plans):
            cohort = self.cohorts_.get(plan.protocol_name)
            if cohort is None:
                raise UnknownProtocol(f"no fitted cohort for protocol {plan.protocol_name!r}")
            gm = normalize_plan(plan, self.protocols_[plan.protocol_name]).gm_score
            out[i] = (gm, cohort.rank(gm, member=False))
        return out

    def fit_transform(self, X, y=None, **fit_params):
        plans = check_plans(X)
        self.fit(plans)
        out = np.empty((len(plans), 2))
        for name, idx in _group(plans, self.protocols_).items():
            entries = score_cohort([plans[i] for i in idx], self.protocols_[name])
            for i, e in zip(idx, entries):
                out[i] = (e.gm_score, e.percentile)
        return out


class PercentileRetriever(RegressorMixin, BaseEstimator):
    """Predicts plan percentiles from the ``k`` most similar fitted plans.

    ``fit(X)`` scores the plans against their own protocol cohorts; ``fit(X, y)``
    stores the given percentiles instead (e.g. percentiles earned in a larger
    pre-split cohort). ``predict`` returns the estimate named by
    ``aggregation``.
    """

    def __init__(
        self,
        protocols=None,
        alpha: float = 0.0,
        beta_norm: float = 1.0,
        beta_raw: float = 0.0,
        k: int = 4,
        aggregation: str = "weighted_average",
        embedder=None,
    ):
        self.protocols = protocols
        self.alpha = alpha
        self.beta_norm = beta_norm
        self.beta_raw = beta_raw
        self.k = k
        self.aggregation = aggregation
        self.embedder = embedder

    @property
    def config_(self) -> RetrievalConfig:
        return RetrievalConfig(self.alpha, self.beta_norm, self.beta_raw, self.k)

    def fit(self, X, y=None):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {sorted(AGGREGATIONS)}, got {self.aggregation!r}")
        self.config_  # validates the hyperparameters
        plans = check_plans(X)
        specs = check_protocols(self.protocols)
        groups = _group(plans, specs)
        if y is not None and len(y) != len(plans):
            raise LengthMismatch(f"{len(plans)} plans but {len(y)} targets")

        entries: dict[str, list[KBEntry]] = {name: [] for name in specs}
        for name, idx in sorted(groups.items()):
            scored = score_cohort([plans[i] for i in idx], specs[name])
            if y is not None:
                scored = [
                    KBEntry(e.plan_id, e.protocol_name, e.raw_metrics, e.normalized_metrics, e.gm_score, float(y[i]))
                    for e, i in zip(scored, idx)
                ]
            entries[name] = scored
        self.embedder_ = self.embedder if self.embedder is not None else HashingEmbedder()
        self.kb_ = KnowledgeBase(specs, entries, {"provider": self.embedder_.provider_id})
        self.indexes_ = build_indexes(self.kb_, self.embedder_)
        return self

    @classmethod
    def from_knowledge_base(cls, kb: KnowledgeBase, config: RetrievalConfig | None = None, embedder=None, **kwargs):
        """Wrap an existing knowledge base without re-scoring it."""
        config = config or RetrievalConfig()
        est = cls(
            protocols=list(kb.protocols.values()),
            alpha=config.alpha,
            beta_norm=config.beta_norm,
            beta_raw=config.beta_raw,
            k=config.k,
            embedder=embedder,
            **kwargs,
        )
        est.embedder_ = embedder if embedder is not None else HashingEmbedder()
        est.kb_ = kb
        est.indexes_ = build_indexes(kb, est.embedder_)
        return est

    def predict_detailed(self, X):
        check_is_fitted(self, "kb_")
        config = self.config_
        return [predict(p, self.kb_, self.indexes_, config, self.embedder_) for p in check_plans(X)]

    def predict(self, X):
        field = AGGREGATIONS[self.aggregation]
        return np.array([getattr(r, field) for r in self.predict_detailed(X)])
