import pytest
from hypothesis import given
from hypothesis import strategies as st

from planscore import check_constraints
from planscore.errors import MissingMetric, NonPositiveLimit
from planscore.scoring import normalize_metrics

from conftest import make_plan, make_spec
from oracles import violated


def test_single_violation():
    spec = make_spec(limits={"Heart_mean": 25})
    report = check_constraints(make_plan(Heart_mean=26), spec)
    assert report.metric_ids == ["Heart_mean"]
    v = report.violations[0]
    assert (v.raw_value, v.limit) == (26, 25)
    assert v.normalized_value == pytest.approx(104.000001, abs=1e-12)


def test_equality_passes():
    limits = {"A": 50, "B": 25.5, "C": 0.1}
    assert not check_constraints(make_plan(**limits), make_spec(limits=limits))


def test_canonical_order():
    limits = {"E": 1, "D": 1, "C": 1, "B": 1, "A": 1}
    report = check_constraints(make_plan(A=0.5, B=2, C=1, D=3, E=0.9), make_spec(limits=limits))
    assert report.metric_ids == ["B", "D"]


def test_plan_is_validated():
    with pytest.raises(MissingMetric):
        check_constraints(make_plan(A=1), make_spec())


limit = st.floats(0.01, 1000, allow_nan=False)


@given(st.dictionaries(st.sampled_from("ABCDEFGH"), limit, min_size=1), st.data())
def test_matches_oracle_and_scoring(limits, data):
    metrics = {
        m: data.draw(st.one_of(st.just(v), st.floats(0, 2 * v), st.just(v * (1 + 1e-15))))
        for m, v in limits.items()
    }
    spec = make_spec(limits=limits)
    report = check_constraints(make_plan(**metrics), spec)
    assert report.metric_ids == violated(metrics, limits)
    assert bool(report) == (max(metrics[m] / limits[m] for m in limits) > 1)
    norm = normalize_metrics(make_plan(**metrics), spec)
    for v in report.violations:
        assert v.normalized_value == norm[v.metric_id]


def test_zero_limit_rejected():
    spec = make_spec(limits={"A": 0.0})
    with pytest.raises(NonPositiveLimit):
        check_constraints(make_plan(A=1.0), spec)
