"""Shared domain types and their validation rules."""

from __future__ import annotations

import enum
import math
import numbers
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import (
    DuplicateMetricId,
    EmptyProtocol,
    ExtraMetric,
    InconsistentUnit,
    InvalidConfig,
    InvalidPlan,
    MissingMetric,
    NegativeValue,
    NonFiniteValue,
    NonPositiveLimit,
    ProtocolMismatch,
)

EPSILON = 1e-6
K_MIN = 3
K_MAX = 10


class MetricKind(str, enum.Enum):
    MAX_DOSE = "MaxDose"
    MEAN_DOSE = "MeanDose"
    DOSE_AT_VOLUME_PCT = "DoseAtVolumePct"
    DOSE_AT_VOLUME_CC = "DoseAtVolumeCc"
    VOLUME_AT_DOSE_PCT = "VolumeAtDosePct"
    VOLUME_AT_DOSE_GY = "VolumeAtDoseGy"

    @property
    def is_dose(self) -> bool:
        return self in _DOSE_KINDS


_DOSE_KINDS = frozenset(
    {
        MetricKind.MAX_DOSE,
        MetricKind.MEAN_DOSE,
        MetricKind.DOSE_AT_VOLUME_PCT,
        MetricKind.DOSE_AT_VOLUME_CC,
    }
)
DOSE_UNITS = frozenset({"Gy"})
VOLUME_UNITS = frozenset({"%", "cc"})


@dataclass(frozen=True)
class ConstraintSpec:
    """One upper-limit dose-volume constraint of a protocol."""

    metric_id: str
    structure: str
    metric_kind: MetricKind
    limit: float
    unit: str

    def __post_init__(self):
        object.__setattr__(self, "metric_kind", MetricKind(self.metric_kind))
        object.__setattr__(self, "limit", float(self.limit))

    def to_dict(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "structure": self.structure,
            "metric_kind": self.metric_kind.value,
            "limit": self.limit,
            "unit": self.unit,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConstraintSpec":
        return cls(
            metric_id=str(data["metric_id"]),
            structure=str(data["structure"]),
            metric_kind=MetricKind(data["metric_kind"]),
            limit=float(data["limit"]),
            unit=str(data["unit"]),
        )


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    constraints: tuple[ConstraintSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def metric_ids(self) -> tuple[str, ...]:
        return tuple(c.metric_id for c in self.constraints)

    def constraint(self, metric_id: str) -> ConstraintSpec:
        for c in self.constraints:
            if c.metric_id == metric_id:
                return c
        raise KeyError(metric_id)

    def to_dict(self) -> dict:
        return {"name": self.name, "constraints": [c.to_dict() for c in self.constraints]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProtocolSpec":
        return cls(
            name=str(data["name"]),
            constraints=tuple(ConstraintSpec.from_dict(c) for c in data["constraints"]),
        )


@dataclass(frozen=True)
class PlanRecord:
    plan_id: str
    protocol_name: str
    metrics: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "protocol_name": self.protocol_name,
            "metrics": dict(self.metrics),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlanRecord":
        return cls(
            plan_id=str(data["plan_id"]),
            protocol_name=str(data["protocol_name"]),
            metrics={str(k): float(v) for k, v in data["metrics"].items()},
        )


@dataclass(frozen=True)
class KBEntry:
    plan_id: str
    protocol_name: str
    raw_metrics: dict[str, float]
    normalized_metrics: dict[str, float]
    gm_score: float
    percentile: float

    def as_plan(self) -> PlanRecord:
        return PlanRecord(self.plan_id, self.protocol_name, dict(self.raw_metrics))

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "protocol_name": self.protocol_name,
            "raw_metrics": dict(self.raw_metrics),
            "normalized_metrics": dict(self.normalized_metrics),
            "gm_score": self.gm_score,
            "percentile": self.percentile,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KBEntry":
        return cls(
            plan_id=str(data["plan_id"]),
            protocol_name=str(data["protocol_name"]),
            raw_metrics={str(k): float(v) for k, v in data["raw_metrics"].items()},
            normalized_metrics={
                str(k): float(v) for k, v in data["normalized_metrics"].items()
            },
            gm_score=float(data["gm_score"]),
            percentile=float(data["percentile"]),
        )


@dataclass(frozen=True)
class RetrievalConfig:
    """Similarity weights and retrieval depth.

    Weights may be given on any non-negative scale; :meth:`weights` returns
    them normalized to sum to one. Defaults are the best published
    configuration for the MiniLM text backbone.
    """

    alpha: float = 0.004313
    beta_norm: float = 0.983081
    beta_raw: float = 0.012606
    k: int = 4

    def __post_init__(self):
        ws = (self.alpha, self.beta_norm, self.beta_raw)
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise InvalidConfig(f"weights must be finite and non-negative, got {ws}")
        if sum(ws) <= 0:
            raise InvalidConfig("at least one weight must be positive")
        if isinstance(self.k, bool) or int(self.k) != self.k:
            raise InvalidConfig(f"k must be an integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        if not K_MIN <= self.k <= K_MAX:
            raise InvalidConfig(f"k must lie in [{K_MIN}, {K_MAX}], got {self.k}")

    def weights(self) -> tuple[float, float, float]:
        total = self.alpha + self.beta_norm + self.beta_raw
        return (self.alpha / total, self.beta_norm / total, self.beta_raw / total)

    def normalized(self) -> "RetrievalConfig":
        a, bn, br = self.weights()
        return RetrievalConfig(a, bn, br, self.k)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta_norm": self.beta_norm,
            "beta_raw": self.beta_raw,
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RetrievalConfig":
        return cls(
            alpha=float(data["alpha"]),
            beta_norm=float(data["beta_norm"]),
            beta_raw=float(data["beta_raw"]),
            k=int(data["k"]),
        )


@dataclass(frozen=True)
class Neighbor:
    plan_id: str
    combined_score: float
    percentile: float
    s_text: float = 0.0
    s_norm: float = 0.0
    s_raw: float = 0.0

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "combined_score": self.combined_score,
            "percentile": self.percentile,
            "s_text": self.s_text,
            "s_norm": self.s_norm,
            "s_raw": self.s_raw,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Neighbor":
        return cls(
            plan_id=str(data["plan_id"]),
            combined_score=float(data["combined_score"]),
            percentile=float(data["percentile"]),
            s_text=float(data.get("s_text", 0.0)),
            s_norm=float(data.get("s_norm", 0.0)),
            s_raw=float(data.get("s_raw", 0.0)),
        )


@dataclass(frozen=True)
class PredictionResult:
    nn_percentile: float
    weighted_avg_percentile: float
    weighted_median_percentile: float
    neighbors: tuple[Neighbor, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "neighbors", tuple(self.neighbors))

    def to_dict(self) -> dict:
        return {
            "nn_percentile": self.nn_percentile,
            "weighted_avg_percentile": self.weighted_avg_percentile,
            "weighted_median_percentile": self.weighted_median_percentile,
            "neighbors": [n.to_dict() for n in self.neighbors],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PredictionResult":
        return cls(
            nn_percentile=float(data["nn_percentile"]),
            weighted_avg_percentile=float(data["weighted_avg_percentile"]),
            weighted_median_percentile=float(data["weighted_median_percentile"]),
            neighbors=tuple(Neighbor.from_dict(n) for n in data["neighbors"]),
        )


@dataclass(frozen=True)
class Violation:
    metric_id: str
    raw_value: float
    limit: float
    normalized_value: float

    def to_dict(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "raw_value": self.raw_value,
            "limit": self.limit,
            "normalized_value": self.normalized_value,
        }


@dataclass(frozen=True)
class ViolationReport:
    violations: tuple[Violation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "violations", tuple(self.violations))

    @property
    def metric_ids(self) -> list[str]:
        return [v.metric_id for v in self.violations]

    def __len__(self) -> int:
        return len(self.violations)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def to_dict(self) -> dict:
        return {"violations": [v.to_dict() for v in self.violations]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ViolationReport":
        return cls(
            tuple(
                Violation(
                    metric_id=str(v["metric_id"]),
                    raw_value=float(v["raw_value"]),
                    limit=float(v["limit"]),
                    normalized_value=float(v["normalized_value"]),
                )
                for v in data["violations"]
            )
        )


def validate_protocol(spec: ProtocolSpec) -> ProtocolSpec:
    """Check a protocol's invariants and return it with constraints sorted by metric id."""
    if not spec.constraints:
        raise EmptyProtocol(f"protocol {spec.name!r} has no constraints")
    seen: set[str] = set()
    for c in spec.constraints:
        if c.metric_id in seen:
            raise DuplicateMetricId(f"metric id {c.metric_id!r} repeated in {spec.name!r}")
        seen.add(c.metric_id)
        if not (math.isfinite(c.limit) and c.limit > 0):
            raise NonPositiveLimit(f"{c.metric_id}: limit must be positive, got {c.limit}")
        allowed = DOSE_UNITS if c.metric_kind.is_dose else VOLUME_UNITS
        if c.unit not in allowed:
            raise InconsistentUnit(
                f"{c.metric_id}: unit {c.unit!r} incompatible with {c.metric_kind.value}"
            )
    ordered = tuple(sorted(spec.constraints, key=lambda c: c.metric_id))
    return ProtocolSpec(spec.name, ordered)


def validate_plan(plan: PlanRecord, spec: ProtocolSpec) -> PlanRecord:
    if not plan.plan_id:
        raise InvalidPlan("plan_id must be non-empty")
    if plan.protocol_name != spec.name:
        raise ProtocolMismatch(
            f"plan {plan.plan_id!r} belongs to {plan.protocol_name!r}, not {spec.name!r}"
        )
    required = spec.metric_ids
    for metric_id in required:
        if metric_id not in plan.metrics:
            raise MissingMetric(metric_id)
    extra = sorted(set(plan.metrics) - set(required))
    if extra:
        raise ExtraMetric(extra[0])
    for metric_id, value in plan.metrics.items():
        if isinstance(value, bool) or not isinstance(value, numbers.Real):
            raise NonFiniteValue(f"{metric_id}: value {value!r} is not a number")
        if not math.isfinite(value):
            raise NonFiniteValue(f"{metric_id}: value {value!r} is not finite")
        if value < 0:
            raise NegativeValue(f"{metric_id}: value {value!r} is negative")
    return plan
