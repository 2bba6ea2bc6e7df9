"""Constraint normalization, geometric-mean aggregation and percentile ranking."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import EPSILON, KBEntry, PlanRecord, ProtocolSpec, validate_plan
from .errors import EmptyCohort, EmptyInput, MemberNotFound, NonPositiveValue


@dataclass(frozen=True)
class NormalizedPlan:
    plan_id: str
    normalized: dict[str, float]
    gm_score: float


def normalize_metrics(plan: PlanRecord, spec: ProtocolSpec) -> dict[str, float]:
    """Express each metric as a percentage of its limit, plus epsilon.

    Keys follow the protocol's canonical metric order.
    """
    return {c.metric_id: plan.metrics[c.metric_id] / c.limit * 100 + EPSILON for c in spec.constraints}


def geometric_mean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise EmptyInput("geometric mean of an empty sequence")
    for v in vals:
        if not v > 0:
            raise NonPositiveValue(f"geometric mean requires positive values, got {v}")
    return math.exp(math.fsum(math.log(v) for v in vals) / len(vals))


def normalize_plan(plan: PlanRecord, spec: ProtocolSpec) -> NormalizedPlan:
    normalized = normalize_metrics(plan, spec)
    return NormalizedPlan(plan.plan_id, normalized, geometric_mean(normalized.values()))


def midrank_numerator(gm: float, cohort_gms: Sequence[float], member: bool) -> tuple[int, int]:
    """Return ``(2*(G + 0.5*E + 0.5), N)`` as exact integers.

    G counts cohort scores strictly worse (greater) than ``gm``; E counts ties,
    excluding the plan itself when ``member`` is true.
    """
    if len(cohort_gms) == 0:
        raise EmptyCohort("percentile rank needs a non-empty cohort")
    greater = sum(1 for g in cohort_gms if g > gm)
    equal = sum(1 for g in cohort_gms if g == gm)
    if member:
        if equal == 0:
            raise MemberNotFound(f"gm {gm!r} is not in the cohort")
        equal -= 1
        n = len(cohort_gms)
    else:
        n = len(cohort_gms) + 1
    return 2 * greater + equal + 1, n


def percentile_rank(gm: float, cohort_gms: Sequence[float], member: bool) -> float:
    """Midrank percentile of ``gm`` in its cohort; lower gm gives a higher percentile.

    With ``member=False`` the score is ranked as if inserted into the cohort.
    """
    twice, n = midrank_numerator(gm, cohort_gms, member)
    return 50.0 * twice / n


class SortedCohort:
    """Percentile lookups over a fixed cohort in O(log N) each."""

    def __init__(self, gms: Sequence[float]):
        if len(gms) == 0:
            raise EmptyCohort("percentile rank needs a non-empty cohort")
        self._sorted = sorted(gms)
        self._n = len(self._sorted)

    def rank(self, gm: float, member: bool) -> float:
        lo = bisect.bisect_left(self._sorted, gm)
        hi = bisect.bisect_right(self._sorted, gm)
        greater = self._n - hi
        equal = hi - lo
        if member:
            if equal == 0:
                raise MemberNotFound(f"gm {gm!r} is not in the cohort")
            equal -= 1
            n = self._n
        else:
            n = self._n + 1
        return 50.0 * (2 * greater + equal + 1) / n


def score_cohort(plans: Sequence[PlanRecord], spec: ProtocolSpec) -> list[KBEntry]:
    """Score every plan against the whole cohort; output order follows input order."""
    normalized = [normalize_plan(validate_plan(p, spec), spec) for p in plans]
    if not normalized:
        return []
    cohort = SortedCohort([n.gm_score for n in normalized])
    out = []
    for plan, norm in zip(plans, normalized):
        out.append(
            KBEntry(
                plan_id=plan.plan_id,
                protocol_name=plan.protocol_name,
                raw_metrics={m: float(plan.metrics[m]) for m in spec.metric_ids},
                normalized_metrics=norm.normalized,
                gm_score=norm.gm_score,
                percentile=cohort.rank(norm.gm_score, member=True),
            )
        )
    return out
