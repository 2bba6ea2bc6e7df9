import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from planscore.core import (
    ConstraintSpec,
    KBEntry,
    PlanRecord,
    ProtocolSpec,
    RetrievalConfig,
    validate_plan,
    validate_protocol,
)
from planscore.errors import (
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
    ValidationError,
)

from conftest import make_plan, make_spec


def test_constraints_sorted_by_metric_id():
    spec = validate_protocol(make_spec(limits={"B": 25, "A": 50}))
    assert spec.metric_ids == ("A", "B")
    assert [c.limit for c in spec.constraints] == [50.0, 25.0]


def test_duplicate_metric_rejected():
    spec = ProtocolSpec(
        "P",
        (
            ConstraintSpec("Heart_mean", "Heart", "MeanDose", 25, "Gy"),
            ConstraintSpec("Heart_mean", "Heart", "MeanDose", 30, "Gy"),
        ),
    )
    with pytest.raises(DuplicateMetricId):
        validate_protocol(spec)


@pytest.mark.parametrize("limit", [0.0, -1.0, math.inf, math.nan])
def test_bad_limit_rejected(limit):
    with pytest.raises(NonPositiveLimit):
        validate_protocol(make_spec(limits={"A": limit}))


def test_empty_protocol_rejected():
    with pytest.raises(EmptyProtocol):
        validate_protocol(ProtocolSpec("P", ()))


def test_unit_must_match_kind():
    with pytest.raises(InconsistentUnit):
        validate_protocol(make_spec(kind="MaxDose", unit="%"))
    with pytest.raises(InconsistentUnit):
        validate_protocol(make_spec(kind="VolumeAtDosePct", unit="Gy"))
    validate_protocol(make_spec(kind="VolumeAtDoseGy", unit="cc"))


def test_missing_metric():
    spec = make_spec(limits={"Cord_max_Gy": 45, "Heart_mean_Gy": 25})
    with pytest.raises(MissingMetric) as info:
        validate_plan(make_plan(Heart_mean_Gy=10), spec)
    assert info.value.metric_id == "Cord_max_Gy"


def test_exact_metric_set_accepted_unchanged():
    spec = make_spec()
    plan = make_plan(A=10, B=0)
    assert validate_plan(plan, spec) is plan


def test_plan_value_errors():
    spec = make_spec()
    with pytest.raises(NonFiniteValue):
        validate_plan(make_plan(A=math.nan, B=1), spec)
    with pytest.raises(NonFiniteValue):
        validate_plan(make_plan(A=math.inf, B=1), spec)
    with pytest.raises(NegativeValue):
        validate_plan(make_plan(A=-0.5, B=1), spec)
    with pytest.raises(ExtraMetric):
        validate_plan(make_plan(A=1, B=1, C=1), spec)
    with pytest.raises(ProtocolMismatch):
        validate_plan(make_plan(protocol="Q", A=1, B=1), spec)
    with pytest.raises(InvalidPlan):
        validate_plan(PlanRecord("", "P", {"A": 1.0, "B": 1.0}), spec)
    with pytest.raises(NonFiniteValue):
        validate_plan(PlanRecord("x", "P", {"A": True, "B": 1.0}), spec)


def test_validation_errors_share_a_base():
    assert issubclass(MissingMetric, ValidationError)
    assert MissingMetric("m").to_dict()["error"] == "MissingMetric"


def test_retrieval_config_bounds():
    for bad in (dict(k=2), dict(k=11), dict(k=3.5), dict(alpha=-1.0), dict(alpha=0, beta_norm=0, beta_raw=0)):
        with pytest.raises(InvalidConfig):
            RetrievalConfig(**bad)
    cfg = RetrievalConfig(2, 1, 1, k=3)
    assert cfg.weights() == (0.5, 0.25, 0.25)


def test_default_config_is_published_minilm_row():
    cfg = RetrievalConfig()
    assert (cfg.alpha, cfg.beta_norm, cfg.beta_raw, cfg.k) == (0.004313, 0.983081, 0.012606, 4)


ids = st.text(alphabet="ABCDEFGHIJ_0123456789", min_size=1, max_size=12)
values = st.floats(min_value=0, max_value=1e4, allow_nan=False)


@given(st.dictionaries(ids, st.floats(min_value=0.01, max_value=1e3), min_size=1, max_size=8), st.data())
def test_round_trip_and_idempotence(limits, data):
    spec = validate_protocol(make_spec(limits=limits))
    assert ProtocolSpec.from_dict(spec.to_dict()) == spec
    metrics = {m: data.draw(values) for m in limits}
    plan = PlanRecord("x", "P", metrics)
    assert PlanRecord.from_dict(plan.to_dict()) == plan
    assert validate_plan(validate_plan(plan, spec), spec) == plan
    entry = KBEntry("x", "P", metrics, {m: v + 1 for m, v in metrics.items()}, 3.0, 50.0)
    assert KBEntry.from_dict(entry.to_dict()) == entry
