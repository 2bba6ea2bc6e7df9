"""Protocol constraint checking."""

from __future__ import annotations

from .core import EPSILON, PlanRecord, ProtocolSpec, Violation, ViolationReport, validate_plan, validate_protocol


def check_constraints(plan: PlanRecord, spec: ProtocolSpec) -> ViolationReport:
    """List the metrics whose raw value strictly exceeds the protocol limit.

    A value equal to its limit passes. Violations come back in canonical
    metric order.
    """
    spec = validate_protocol(spec)
    validate_plan(plan, spec)
    violations = []
    for c in sorted(spec.constraints, key=lambda c: c.metric_id):
        raw = plan.metrics[c.metric_id]
        if raw > c.limit:
            violations.append(Violation(c.metric_id, float(raw), c.limit, raw / c.limit * 100 + EPSILON))
    return ViolationReport(tuple(violations))
