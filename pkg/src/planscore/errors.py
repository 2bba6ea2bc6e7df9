"""Exception hierarchy.

Every error carries a ``category`` string so the CLI and the HTTP service can
report failures in a machine-parseable way.
"""

from __future__ import annotations


class PlanScoreError(Exception):
    category = "PlanScoreError"
    http_status = 400

    def to_dict(self) -> dict:
        return {"error": self.category, "message": str(self)}


class ValidationError(PlanScoreError):
    category = "ValidationError"


class EmptyProtocol(ValidationError):
    category = "EmptyProtocol"


class DuplicateMetricId(ValidationError):
    category = "DuplicateMetricId"


class NonPositiveLimit(ValidationError):
    category = "NonPositiveLimit"


class InconsistentUnit(ValidationError):
    category = "InconsistentUnit"


class InvalidPlan(ValidationError):
    category = "InvalidPlan"


class MissingMetric(ValidationError):
    category = "MissingMetric"

    def __init__(self, metric_id: str):
        super().__init__(f"plan is missing metric {metric_id!r}")
        self.metric_id = metric_id


class ExtraMetric(ValidationError):
    category = "ExtraMetric"

    def __init__(self, metric_id: str):
        super().__init__(f"plan has metric {metric_id!r} not in protocol")
        self.metric_id = metric_id


class NonFiniteValue(ValidationError):
    category = "NonFiniteValue"


class NegativeValue(ValidationError):
    category = "NegativeValue"


class ProtocolMismatch(ValidationError):
    category = "ProtocolMismatch"


class InvalidConfig(ValidationError):
    category = "InvalidConfig"


class EmptyInput(PlanScoreError):
    category = "EmptyInput"


class NonPositiveValue(PlanScoreError):
    category = "NonPositiveValue"


class LengthMismatch(PlanScoreError):
    category = "LengthMismatch"


class DimensionMismatch(PlanScoreError):
    category = "DimensionMismatch"


class EmptyCohort(PlanScoreError):
    category = "EmptyCohort"


class MemberNotFound(PlanScoreError):
    category = "MemberNotFound"


class UnknownProtocol(PlanScoreError):
    category = "UnknownProtocol"
    http_status = 404


class InsufficientCohort(PlanScoreError):
    category = "InsufficientCohort"
    http_status = 422

    def __init__(self, k: int, available: int):
        super().__init__(f"need {k} knowledge-base entries, protocol has {available}")
        self.k = k
        self.available = available


class FormatVersionMismatch(PlanScoreError):
    category = "FormatVersionMismatch"


class CorruptFile(PlanScoreError):
    category = "CorruptFile"


class IoFailure(PlanScoreError):
    category = "IoFailure"
    http_status = 500


class EmbeddingProviderFailure(PlanScoreError):
    category = "EmbeddingProviderFailure"
    http_status = 502


class SingularKernel(PlanScoreError):
    category = "SingularKernel"
    http_status = 500


class OutOfBounds(PlanScoreError):
    category = "OutOfBounds"


class LexiconExhausted(PlanScoreError):
    category = "LexiconExhausted"


class BackendFailure(PlanScoreError):
    category = "BackendFailure"
    http_status = 502
