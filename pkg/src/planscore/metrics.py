"""Prediction-quality metrics and the scalarized tuning loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from scipy.stats import rankdata

from .core import PlanRecord, PredictionResult, RetrievalConfig
from .embedding import Embedder
from .errors import EmptyInput, LengthMismatch
from .knowledge_base import KnowledgeBase, ProtocolIndex
from .retrieval import predict

METHODS = ("nearest_neighbor", "weighted_average", "weighted_median")
METHOD_LABELS = {
    "nearest_neighbor": "Nearest Neighbor",
    "weighted_average": "Weighted Average",
    "weighted_median": "Weighted Median",
}
_RESULT_FIELD = {
    "nearest_neighbor": "nn_percentile",
    "weighted_average": "weighted_avg_percentile",
    "weighted_median": "weighted_median_percentile",
}
UNDEFINED = math.nan


def _pair(pred: Sequence[float], truth: Sequence[float], min_len: int = 1):
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions but {len(truth)} true values")
    if len(pred) < min_len:
        raise EmptyInput(f"need at least {min_len} paired values, got {len(pred)}")
    return [float(p) for p in pred], [float(t) for t in truth]


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth)
    return math.fsum(abs(a - b) for a, b in zip(p, t)) / len(p)


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth)
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(p, t)) / len(p))


def pearson_r(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Pearson correlation; NaN when either input has zero variance."""
    p, t = _pair(pred, truth, min_len=2)
    mp = math.fsum(p) / len(p)
    mt = math.fsum(t) / len(t)
    dp = [a - mp for a in p]
    dt = [b - mt for b in t]
    spp = math.fsum(a * a for a in dp)
    stt = math.fsum(b * b for b in dt)
    if spp == 0 or stt == 0:
        return UNDEFINED
    r = math.fsum(a * b for a, b in zip(dp, dt)) / math.sqrt(spp * stt)
    return min(1.0, max(-1.0, r))


def spearman_rho(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _pair(pred, truth, min_len=2)
    return pearson_r(rankdata(p).tolist(), rankdata(t).tolist())


def r2(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``; may be negative."""
    p, t = _pair(pred, truth, min_len=2)
    mt = math.fsum(t) / len(t)
    ss_tot = math.fsum((b - mt) ** 2 for b in t)
    if ss_tot == 0:
        return UNDEFINED
    ss_res = math.fsum((a - b) ** 2 for a, b in zip(p, t))
    return 1.0 - ss_res / ss_tot


def pct_within(pred: Sequence[float], truth: Sequence[float], threshold: float) -> float:
    p, t = _pair(pred, truth)
    hits = sum(1 for a, b in zip(p, t) if abs(a - b) <= threshold)
    return 100.0 * hits / len(p)


def scalarized_loss(rmse_avg: float, mae_nn: float, pct5_nn: float, pct10_avg: float) -> float:
    return rmse_avg + mae_nn + (100.0 - pct5_nn) / 100.0 + (100.0 - pct10_avg) / 100.0


@dataclass(frozen=True)
class MethodMetrics:
    pearson_r: float
    spearman_rho: float
    mae: float
    rmse: float
    r2: float
    pct_within_5: float
    pct_within_10: float

    @classmethod
    def compute(cls, pred: Sequence[float], truth: Sequence[float]) -> "MethodMetrics":
        if len(pred) >= 2:
            r, rho, det = pearson_r(pred, truth), spearman_rho(pred, truth), r2(pred, truth)
        else:
            r = rho = det = UNDEFINED
        return cls(
            pearson_r=r,
            spearman_rho=rho,
            mae=mae(pred, truth),
            rmse=rmse(pred, truth),
            r2=det,
            pct_within_5=pct_within(pred, truth, 5.0),
            pct_within_10=pct_within(pred, truth, 10.0),
        )

    def to_dict(self) -> dict:
        return {k: _json_number(v) for k, v in self.__dict__.items()}


def _json_number(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


@dataclass(frozen=True)
class EvaluationReport:
    config: RetrievalConfig
    methods: dict[str, MethodMetrics]
    loss: float
    n_plans: int
    predictions: list[dict] = field(default_factory=list, compare=False)

    @property
    def loss_terms(self) -> dict[str, float]:
        return {
            "rmse_avg": self.methods["weighted_average"].rmse,
            "mae_nn": self.methods["nearest_neighbor"].mae,
            "pct5_nn": self.methods["nearest_neighbor"].pct_within_5,
            "pct10_avg": self.methods["weighted_average"].pct_within_10,
        }

    def to_dict(self, include_predictions: bool = False) -> dict:
        out = {
            "config": self.config.to_dict(),
            "n_plans": self.n_plans,
            "loss": self.loss,
            "methods": {m: self.methods[m].to_dict() for m in METHODS},
        }
        if include_predictions:
            out["predictions"] = self.predictions
        return out


def report_from_predictions(
    config: RetrievalConfig,
    results: Sequence[PredictionResult],
    truth: Sequence[float],
    plan_ids: Sequence[str] = (),
) -> EvaluationReport:
    if not results:
        raise EmptyInput("evaluation needs at least one test plan")
    methods = {
        m: MethodMetrics.compute([getattr(r, _RESULT_FIELD[m]) for r in results], truth)
        for m in METHODS
    }
    nn, avg = methods["nearest_neighbor"], methods["weighted_average"]
    loss = scalarized_loss(avg.rmse, nn.mae, nn.pct_within_5, avg.pct_within_10)
    predictions = [
        {
            "plan_id": pid,
            "true_percentile": t,
            "nn": r.nn_percentile,
            "weighted_avg": r.weighted_avg_percentile,
            "weighted_median": r.weighted_median_percentile,
        }
        for pid, r, t in zip(plan_ids, results, truth)
    ]
    return EvaluationReport(config, methods, loss, len(results), predictions)


def evaluate_system(
    kb: KnowledgeBase,
    indexes: Mapping[str, ProtocolIndex],
    test_set: Sequence[tuple[PlanRecord, float]],
    config: RetrievalConfig,
    embedder: Embedder,
) -> EvaluationReport:
    """Predict every test plan and score the three aggregation methods."""
    if not test_set:
        raise EmptyInput("evaluation needs at least one test plan")
    results = [predict(plan, kb, indexes, config, embedder) for plan, _ in test_set]
    truth = [float(t) for _, t in test_set]
    return report_from_predictions(config, results, truth, [p.plan_id for p, _ in test_set])


def format_report_table(report: EvaluationReport) -> str:
    header = f"{'Method':<18} {'Pearson r':>10} {'Spearman':>10} {'MAE':>8} {'RMSE':>8} {'R^2':>8} {'%<=5pt':>8} {'%<=10pt':>8}"
    lines = [header, "-" * len(header)]

    def fmt(x: float, width: int, digits: int = 4) -> str:
        return f"{'n/a':>{width}}" if math.isnan(x) else f"{x:>{width}.{digits}f}"

    for m in METHODS:
        s = report.methods[m]
        lines.append(
            f"{METHOD_LABELS[m]:<18} {fmt(s.pearson_r, 10)} {fmt(s.spearman_rho, 10)} "
            f"{fmt(s.mae, 8)} {fmt(s.rmse, 8)} {fmt(s.r2, 8)} "
            f"{fmt(s.pct_within_5, 8, 2)} {fmt(s.pct_within_10, 8, 2)}"
        )
    lines.append(f"Scalarized loss: {report.loss:.6f}  (n = {report.n_plans})")
    return "\n".join(lines)
