import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planscore import RetrievalConfig, build_indexes, build_kb, tune_retrieval
from planscore.errors import OutOfBounds, SingularKernel
from planscore.tuner import _factor, decode, ei_from_moments, encode, expected_improvement, gp_fit, gp_minimize
from planscore.knowledge_base import rng_stream


def test_decode_examples():
    assert decode((0, 1, 0, 1)) == RetrievalConfig(0, 1, 0, 10)
    cfg = decode((0.5, 0.5, 0.5, 0))
    assert cfg.weights() == (1 / 3, 1 / 3, 1 / 3) and cfg.k == 3
    assert decode((0, 0, 0, 0.5)).weights() == (1 / 3, 1 / 3, 1 / 3)
    assert decode((1, 1, 1, 0.5)).k == 7
    with pytest.raises(OutOfBounds):
        decode((0.1, 0.2, 1.2, 0))
    with pytest.raises(OutOfBounds):
        decode((0.1, 0.2, 0.3))


unit = st.floats(0, 1)


@given(unit, unit, unit, unit)
def test_decoded_configs_are_valid(a, b, c, x):
    cfg = decode((a, b, c, x))
    w = cfg.weights()
    assert min(w) >= 0 and abs(math.fsum(w) - 1) <= 1e-12
    assert 3 <= cfg.k <= 10


@given(unit, unit, st.floats(0.01, 1), st.integers(3, 10))
def test_decode_encode_round_trip(a, b, c, k):
    cfg = RetrievalConfig(a, b, c, k).normalized()
    back = decode(encode(cfg))
    assert back.k == cfg.k
    assert back.weights() == pytest.approx(cfg.weights(), abs=1e-12)


def _obs(n=8, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 4))
    return x, ((x - 0.3) ** 2).sum(1)


def test_gp_interpolates_and_is_deterministic():
    x, y = _obs()
    model = gp_fit(x, y)
    assert model.length_scale in (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
    assert gp_fit(x, y).length_scale == model.length_scale
    mu, _ = model.predict(x)
    assert np.max(np.abs(mu - model.standardize(y))) <= 1e-6


def test_gp_picks_max_likelihood_scale():
    from planscore import tuner

    x, y = _obs(12, 4)
    chosen = gp_fit(x, y)
    for ell in tuner.LENGTH_SCALES:
        orig = tuner.LENGTH_SCALES
        try:
            tuner.LENGTH_SCALES = (ell,)
            assert gp_fit(x, y).log_marginal_likelihood <= chosen.log_marginal_likelihood
        finally:
            tuner.LENGTH_SCALES = orig


def test_gp_midpoint_variance_positive():
    model = gp_fit([[0, 0, 0, 0], [1, 1, 1, 1]], [1.0, 2.0])
    _, sd = model.predict([[0.5] * 4])
    assert sd[0] > 0


def test_singular_kernel():
    with pytest.raises(SingularKernel):
        _factor(-np.eye(3))


def test_ei_examples():
    assert ei_from_moments(1.0, 0.0, 0.5) == 0
    assert ei_from_moments(-1.0, 0.0, 0.0) == 1
    assert ei_from_moments(0.0, 1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    x, y = _obs()
    assert (expected_improvement(gp_fit(x, y), np.random.default_rng(1).random((50, 4)), y.min()) >= 0).all()


def quadratic(p):
    return sum((v - 0.3) ** 2 for v in p)


def test_quadratic_vs_random_search_oracle():
    trace = gp_minimize(quadratic, n_calls=40, n_init=10, seed=0)
    assert math.dist(trace.best_point, (0.3,) * 4) <= 0.1
    oracle = min(quadratic(p) for p in rng_stream(0, "oracle").random((10_000, 4)))
    assert trace.best_loss <= 10 * oracle + 1e-3


def test_same_seed_same_trace():
    assert gp_minimize(quadratic, 15, 5, seed=9).to_dict() == gp_minimize(quadratic, 15, 5, seed=9).to_dict()
    assert gp_minimize(quadratic, 15, 5, seed=9).to_dict() != gp_minimize(quadratic, 15, 5, seed=8).to_dict()


def test_pure_random_boundary():
    trace = gp_minimize(quadratic, n_calls=10, n_init=10, seed=2)
    draws = rng_stream(2, "tuner").random((10, 4))
    assert [e.point for e in trace.entries] == [tuple(p) for p in draws]
    assert trace.best_loss == min(quadratic(p) for p in draws)


def test_argument_checks():
    with pytest.raises(ValueError):
        gp_minimize(quadratic, n_calls=5, n_init=10)
    with pytest.raises(ValueError):
        gp_minimize(quadratic, n_calls=5, n_init=1)


def test_partial_trace_on_error():
    calls = []

    def flaky(p):
        calls.append(p)
        if len(calls) == 4:
            raise RuntimeError("boom")
        return quadratic(p)

    with pytest.raises(RuntimeError) as info:
        gp_minimize(flaky, n_calls=10, n_init=5, seed=0)
    assert len(info.value.partial_trace.entries) == 3


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_trace_invariants(seed):
    evaluated = []

    def objective(p):
        evaluated.append(p)
        return quadratic(decode(p).weights() + (decode(p).k / 10,))

    trace = gp_minimize(objective, n_calls=20, n_init=6, seed=seed, decoder=decode)
    assert len(trace.entries) == 20
    assert len(evaluated) == trace.n_evaluations <= 20
    running = [min(e.loss for e in trace.entries[: i + 1]) for i in range(20)]
    assert all(a >= b for a, b in zip(running, running[1:]))
    assert trace.best_loss == running[-1] <= min(e.loss for e in trace.entries[:6])
    for e in trace.entries:
        w = e.config.weights()
        assert min(w) >= 0 and abs(math.fsum(w) - 1) <= 1e-12 and 3 <= e.config.k <= 10


def test_cached_configs_are_recorded():
    evaluated = []

    def objective(p):
        evaluated.append(p)
        return 1.0

    coarse = lambda p: round(p[0])  # noqa: E731
    trace = gp_minimize(objective, n_calls=12, n_init=4, seed=0, decoder=coarse)
    assert len(trace.entries) == 12
    assert len(evaluated) == trace.n_evaluations <= 2
    assert any(e.cached for e in trace.entries)


def test_tune_retrieval_bounds(bundle):
    kb, held, indexes, emb = bundle
    trace = tune_retrieval(kb, indexes, held, emb, n_calls=10, seed=0, n_init=10)
    assert len(trace.entries) == 10
    assert all(3 <= e.config.k <= 10 for e in trace.entries)


def test_self_retrieval_tuning_beats_k3_grid(corpus, embedder):
    from planscore.tuner import retrieval_objective

    protocols, plans = corpus
    kb, _ = build_kb(plans, protocols, 0.0, seed=0)
    indexes = build_indexes(kb, embedder)
    test = [(e.as_plan(), e.percentile) for name in sorted(kb.protocols) for e in kb.entries_for(name)][::3]
    loss = retrieval_objective(kb, indexes, test, embedder)
    grid = [loss(RetrievalConfig(i / 20, j / 20, (20 - i - j) / 20, 3)) for i in range(21) for j in range(21 - i)]
    trace = tune_retrieval(kb, indexes, test, embedder, n_calls=50, seed=0)
    assert trace.best_loss <= min(grid)
    from planscore import evaluate_system

    nn = evaluate_system(kb, indexes, test, trace.best_config, embedder).methods["nearest_neighbor"]
    assert nn.mae == 0 and nn.pct_within_5 == 100


def test_norm_dominant_setup_prefers_beta_norm():
    from conftest import rigged_tuning_setup

    kb, indexes, test, emb = rigged_tuning_setup(seed=0)
    trace = tune_retrieval(kb, indexes, test, emb, n_calls=50, seed=0)
    assert trace.best_config.weights()[1] >= 0.8
