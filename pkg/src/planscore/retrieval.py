"""Geometric-mean candidate selection, weighted re-ranking and percentile aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import accumulate
from typing import Mapping, Sequence

import numpy as np

from .core import Neighbor, PlanRecord, PredictionResult, RetrievalConfig, validate_plan
from .embedding import Embedder, cosine_similarity
from .errors import DimensionMismatch, EmptyInput, InsufficientCohort, LengthMismatch
from .knowledge_base import KnowledgeBase, ProtocolIndex, render_plan_text
from .scoring import normalize_plan


@dataclass(frozen=True)
class ScoredNeighbor:
    position: int
    plan_id: str
    s_text: float
    s_norm: float
    s_raw: float
    combined: float
    percentile: float

    def to_neighbor(self) -> Neighbor:
        return Neighbor(
            plan_id=self.plan_id,
            combined_score=self.combined,
            percentile=self.percentile,
            s_text=self.s_text,
            s_norm=self.s_norm,
            s_raw=self.s_raw,
        )


@dataclass(frozen=True)
class Query:
    gm_score: float
    text_vector: np.ndarray
    norm_vector: np.ndarray
    raw_vector: np.ndarray


def candidate_select(query_gm: float, index: ProtocolIndex, k: int) -> list[int]:
    """Positions of the ``k`` entries whose gm score is closest to ``query_gm``."""
    if len(index) < k:
        raise InsufficientCohort(k, len(index))
    gaps = np.abs(index.gm_scores - query_gm)
    order = sorted(range(len(index)), key=lambda i: (gaps[i], index.plan_ids[i]))
    return order[:k]


def metric_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """``1 / (1 + d / sqrt(n))`` for Euclidean distance ``d`` in ``n`` dimensions."""
    if len(a) != len(b):
        raise DimensionMismatch(f"cannot compare vectors of length {len(a)} and {len(b)}")
    n = len(a)
    if n == 0:
        raise DimensionMismatch("metric vectors must have at least one coordinate")
    a = a.tolist() if isinstance(a, np.ndarray) else a
    b = b.tolist() if isinstance(b, np.ndarray) else b
    d = math.sqrt(math.fsum((x - y) * (x - y) for x, y in zip(a, b)))
    return 1.0 / (1.0 + d / math.sqrt(n))


def combine(weights: tuple[float, float, float], s_text: float, s_norm: float, s_raw: float) -> float:
    a, bn, br = weights
    return a * s_text + bn * s_norm + br * s_raw


def rerank(
    candidates: Sequence[int],
    index: ProtocolIndex,
    query: Query,
    config: RetrievalConfig,
) -> list[ScoredNeighbor]:
    if not candidates:
        raise EmptyInput("re-ranking needs at least one candidate")
    weights = config.weights()
    scored = []
    for pos in candidates:
        s_text = min(1.0, max(0.0, cosine_similarity(query.text_vector, index.text_vectors[pos])))
        s_norm = metric_similarity(query.norm_vector, index.norm_vectors[pos])
        s_raw = metric_similarity(query.raw_vector, index.raw_vectors[pos])
        scored.append(
            ScoredNeighbor(
                position=pos,
                plan_id=index.plan_ids[pos],
                s_text=s_text,
                s_norm=s_norm,
                s_raw=s_raw,
                combined=combine(weights, s_text, s_norm, s_raw),
                percentile=float(index.percentiles[pos]),
            )
        )
    scored.sort(key=lambda s: (-s.combined, s.plan_id))
    return scored


def _check_weights(values: Sequence[float], weights: Sequence[float]) -> list[float]:
    if len(values) != len(weights):
        raise LengthMismatch(f"{len(values)} values but {len(weights)} weights")
    if not values:
        raise EmptyInput("aggregation needs at least one value")
    w = [float(x) for x in weights]
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise ValueError("weights must be finite and non-negative")
    if math.fsum(w) == 0:
        w = [1.0] * len(w)
    return w


def weighted_average(values: Sequence[float], weights: Sequence[float]) -> float:
    w = _check_weights(values, weights)
    avg = math.fsum(x * v for x, v in zip(w, values)) / math.fsum(w)
    # clamp: rounding can leave the quotient one ulp outside [min, max]
    return min(max(avg, min(values)), max(values))


def weighted_median(values: Sequence[float], weights: Sequence[float]) -> float:
    """Lower weighted median: smallest value whose cumulative weight reaches half the total.

    All-zero weights fall back to uniform weights.
    """
    w = _check_weights(values, weights)
    pairs = sorted(zip(values, w), key=lambda p: p[0])
    cumulative = list(accumulate(p[1] for p in pairs))
    total = cumulative[-1]
    for (value, _), cum in zip(pairs, cumulative):
        if 2 * cum >= total:
            return float(value)
    return float(pairs[-1][0])


def make_query(plan: PlanRecord, kb: KnowledgeBase, embedder: Embedder) -> Query:
    spec = kb.protocol(plan.protocol_name)
    validate_plan(plan, spec)
    norm = normalize_plan(plan, spec)
    order = spec.metric_ids
    return Query(
        gm_score=norm.gm_score,
        text_vector=np.asarray(embedder.embed(render_plan_text(plan, spec)), dtype=np.float64),
        norm_vector=np.array([norm.normalized[m] for m in order], dtype=np.float64),
        raw_vector=np.array([plan.metrics[m] for m in order], dtype=np.float64),
    )


def aggregate(neighbors: Sequence[ScoredNeighbor]) -> PredictionResult:
    percentiles = [n.percentile for n in neighbors]
    weights = [n.combined for n in neighbors]
    return PredictionResult(
        nn_percentile=neighbors[0].percentile,
        weighted_avg_percentile=weighted_average(percentiles, weights),
        weighted_median_percentile=weighted_median(percentiles, weights),
        neighbors=tuple(n.to_neighbor() for n in neighbors),
    )


def predict(
    plan: PlanRecord,
    kb: KnowledgeBase,
    indexes: Mapping[str, ProtocolIndex],
    config: RetrievalConfig,
    embedder: Embedder,
) -> PredictionResult:
    """Estimate a plan's percentile from its ``k`` most similar knowledge-base plans."""
    spec = kb.protocol(plan.protocol_name)
    index = indexes.get(spec.name)
    if index is None or len(index) < config.k:
        raise InsufficientCohort(config.k, 0 if index is None else len(index))
    return predict_query(make_query(plan, kb, embedder), index, config)


def predict_query(query: Query, index: ProtocolIndex, config: RetrievalConfig) -> PredictionResult:
    candidates = candidate_select(query.gm_score, index, config.k)
    return aggregate(rerank(candidates, index, query, config))
