import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planscore import RetrievalConfig, SynthConfig, build_indexes, build_kb, generate, predict
from planscore.errors import EmptyInput, InsufficientCohort, LengthMismatch
from planscore.knowledge_base import ProtocolIndex, render_plan_text
from planscore.retrieval import (
    candidate_select,
    make_query,
    metric_similarity,
    rerank,
    weighted_average,
    weighted_median,
)

from oracles import brute_force_predict


def _index(gms, ids=None):
    n = len(gms)
    ids = ids or [f"p{i}" for i in range(n)]
    z = np.zeros((n, 2))
    return ProtocolIndex(tuple(ids), np.array(gms, float), np.linspace(10, 90, n), np.ones((n, 2)), z, z)


def test_candidate_select_examples():
    idx = _index([1, 5, 9, 13])
    assert [idx.gm_scores[i] for i in candidate_select(5.2, idx, 2)] == [5, 9]
    assert sorted(candidate_select(5, _index([1, 5, 9]), 3)) == [0, 1, 2]
    tie = _index([4, 6, 5], ids=["z", "a", "m"])
    assert [tie.plan_ids[i] for i in candidate_select(5, tie, 2)] == ["m", "a"]
    with pytest.raises(InsufficientCohort):
        candidate_select(5, tie, 4)


def test_metric_similarity_examples():
    assert metric_similarity([3.0, 4.0], [3.0, 4.0]) == 1.0
    assert metric_similarity([0.0], [1.0]) == 0.5
    assert metric_similarity([0, 0, 0, 0], [1, 1, 1, 1]) == 0.5


def test_aggregation_examples():
    assert weighted_average([80, 60, 40, 20], [0.4, 0.3, 0.2, 0.1]) == pytest.approx(60, abs=1e-12)
    assert weighted_median([10, 20, 30], [1, 1, 2]) == 20
    assert weighted_median([1, 2], [1, 1]) == 1
    assert weighted_median([5, 1, 3], [1, 1, 1]) == 3
    assert weighted_median([1, 2, 3], [0.1, 5, 0.1]) == 2
    assert weighted_median([1, 2, 3], [0, 0, 0]) == 2
    assert weighted_average([1, 3], [0, 0]) == 2
    with pytest.raises(LengthMismatch):
        weighted_median([1, 2], [1])
    with pytest.raises(EmptyInput):
        weighted_average([], [])


@given(st.lists(st.tuples(st.floats(0.1, 99.9), st.floats(0, 10)), min_size=1, max_size=10))
def test_aggregates_within_range(pairs):
    values, weights = zip(*pairs)
    assert min(values) <= weighted_average(values, weights) <= max(values)
    assert weighted_median(values, weights) in values


@pytest.fixture(scope="module")
def small():
    protocols, plans = generate(SynthConfig(seed=11, protocols=2, plans_per_protocol=30))
    kb, held = build_kb(plans, protocols, 0.2, seed=11)
    from planscore import HashingEmbedder

    emb = HashingEmbedder()
    return kb, held, build_indexes(kb, emb), emb


def test_rerank_identical_query_first(small):
    kb, _, indexes, emb = small
    entry = kb.entries_for(sorted(kb.protocols)[0])[5]
    query = make_query(entry.as_plan(), kb, emb)
    index = indexes[entry.protocol_name]
    ranked = rerank(candidate_select(query.gm_score, index, 5), index, query, RetrievalConfig(1, 1, 1, 5))
    assert ranked[0].plan_id == entry.plan_id and ranked[0].combined == 1.0


def test_rerank_permutes_candidates(small):
    kb, held, indexes, emb = small
    for plan, _ in held:
        query = make_query(plan, kb, emb)
        index = indexes[plan.protocol_name]
        cand = candidate_select(query.gm_score, index, 6)
        ranked = rerank(cand, index, query, RetrievalConfig(0.3, 0.3, 0.4, 6))
        assert sorted(s.position for s in ranked) == sorted(cand)
        combined = [s.combined for s in ranked]
        assert combined == sorted(combined, reverse=True)


def test_equal_components_give_common_value():
    idx = ProtocolIndex(("a",), np.array([1.0]), np.array([50.0]), np.array([[1.0, 0.0]]), np.array([[0.0]]), np.array([[0.0]]))
    from planscore.retrieval import Query

    q = Query(1.0, np.array([1.0, 0.0]), np.array([0.0]), np.array([0.0]))
    third = 1 / 3
    assert rerank([0], idx, q, RetrievalConfig(third, third, third, 3))[0].combined == pytest.approx(1.0, abs=1e-15)


def _oracle_inputs(plan, kb, emb):
    spec = kb.protocol(plan.protocol_name)
    q = make_query(plan, kb, emb)
    entries = [
        {
            "plan_id": e.plan_id,
            "gm": e.gm_score,
            "norm": [e.normalized_metrics[m] for m in spec.metric_ids],
            "raw": [e.raw_metrics[m] for m in spec.metric_ids],
            "percentile": e.percentile,
        }
        for e in kb.entries_for(spec.name)
    ]
    texts = [emb.embed(render_plan_text(e, spec)).tolist() for e in kb.entries_for(spec.name)]
    query = {"gm": q.gm_score, "text": q.text_vector.tolist(), "norm": q.norm_vector.tolist(), "raw": q.raw_vector.tolist()}
    return query, entries, texts


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.integers(3, 10), st.integers(0, 11))
def test_predict_matches_brute_force(small, a, bn, br, k, which):
    kb, held, indexes, emb = small
    plan = held[which][0]
    cfg = RetrievalConfig(a, bn, br, k)
    got = predict(plan, kb, indexes, cfg, emb)
    want = brute_force_predict(*_oracle_inputs(plan, kb, emb), (a, bn, br), k)
    assert [n.plan_id for n in got.neighbors] == want["order"]
    assert got.nn_percentile == want["nn"]
    assert got.weighted_avg_percentile == want["avg"]
    assert got.weighted_median_percentile == want["median"]


def test_self_retrieval(small):
    kb, _, indexes, emb = small
    cfg = RetrievalConfig()
    for name in kb.protocols:
        for e in kb.entries_for(name):
            res = predict(e.as_plan(), kb, indexes, cfg, emb)
            assert res.neighbors[0].plan_id == e.plan_id
            assert res.neighbors[0].combined_score == 1.0
            assert res.nn_percentile == e.percentile


@pytest.mark.parametrize("c", [0.5, 2.0, 8.0, 1024.0])
def test_weight_scaling_invariance_exact_for_powers_of_two(small, c):
    kb, held, indexes, emb = small
    base = RetrievalConfig(0.2, 0.5, 0.3, 5)
    scaled = RetrievalConfig(0.2 * c, 0.5 * c, 0.3 * c, 5)
    for plan, _ in held:
        assert predict(plan, kb, indexes, base, emb) == predict(plan, kb, indexes, scaled, emb)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100))
def test_weight_scaling_invariance(small, c):
    kb, held, indexes, emb = small
    base = RetrievalConfig(0.2, 0.5, 0.3, 5)
    scaled = RetrievalConfig(0.2 * c, 0.5 * c, 0.3 * c, 5)
    for plan, _ in held:
        x = predict(plan, kb, indexes, base, emb)
        y = predict(plan, kb, indexes, scaled, emb)
        assert {n.plan_id for n in x.neighbors} == {n.plan_id for n in y.neighbors}
        assert x.nn_percentile == pytest.approx(y.nn_percentile, abs=1e-12) or x.neighbors[0].combined_score == pytest.approx(
            x.neighbors[1].combined_score, abs=1e-12
        )
        assert x.weighted_avg_percentile == pytest.approx(y.weighted_avg_percentile, abs=1e-9)


def test_predict_needs_enough_neighbors(small):
    kb, held, indexes, emb = small
    plan = held[0][0]
    with pytest.raises(InsufficientCohort):
        predict(plan, kb, {}, RetrievalConfig(), emb)
