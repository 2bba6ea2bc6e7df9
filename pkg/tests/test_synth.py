import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planscore import SynthConfig, check_constraints, generate, validate_plan
from planscore.errors import InvalidConfig, LexiconExhausted
from planscore.synth import LEXICON, log_mean_for_rate


def _violation_frequency(protocols, plans):
    specs = {p.name: p for p in protocols}
    draws = sum(len(p.metrics) for p in plans)
    hits = sum(len(check_constraints(p, specs[p.protocol_name])) for p in plans)
    return hits / draws, draws


def test_deterministic():
    cfg = SynthConfig(seed=4, protocols=3, plans_per_protocol=10)
    assert generate(cfg) == generate(cfg)


def test_default_scale():
    protocols, plans = generate(SynthConfig())
    assert len(protocols) == 9 and len(plans) == 621


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_plans_valid_and_shapes_seed_independent(seed):
    protocols, plans = generate(SynthConfig(seed=seed, protocols=4, plans_per_protocol=6))
    other, _ = generate(SynthConfig(seed=seed + 1, protocols=4, plans_per_protocol=6))
    specs = {p.name: p for p in protocols}
    for plan in plans:
        validate_plan(plan, specs[plan.protocol_name])
    assert [len(p.constraints) for p in protocols] == [len(p.constraints) for p in other]
    assert [p.name for p in protocols] == [p.name for p in other]


@pytest.mark.parametrize("rate", [0.05, 0.1, 0.3])
def test_violation_frequency_calibrated(rate):
    freq, draws = _violation_frequency(*generate(SynthConfig(seed=1, violation_rate=rate, plans_per_protocol=400)))
    assert draws >= 10_000
    assert abs(freq - rate) <= 0.02


def test_zero_rate_is_rare():
    freq, draws = _violation_frequency(*generate(SynthConfig(seed=1, violation_rate=0.0, plans_per_protocol=400)))
    assert draws >= 10_000 and freq < 0.01


def test_log_mean_calibration():
    assert log_mean_for_rate(0.5, 0.3) == 0.0
    assert log_mean_for_rate(0.05, 1.0) == pytest.approx(-1.6448536269514722, abs=1e-12)


def test_explicit_shapes_and_counts():
    protocols, plans = generate(SynthConfig(seed=0, protocols=[("A", 3), ("B", 5)], plans_per_protocol=[2, 4]))
    assert [len(p.constraints) for p in protocols] == [3, 5]
    assert [p.plan_id for p in plans] == ["A-0001", "A-0002"] + [f"B-{i:04d}" for i in range(1, 5)]
    with pytest.raises(InvalidConfig):
        generate(SynthConfig(protocols=[("A", 3)], plans_per_protocol=[1, 2]))


def test_errors():
    with pytest.raises(LexiconExhausted):
        generate(SynthConfig(protocols=[("A", len(LEXICON) + 1)], plans_per_protocol=1))
    with pytest.raises(InvalidConfig):
        SynthConfig(violation_rate=1.0)
