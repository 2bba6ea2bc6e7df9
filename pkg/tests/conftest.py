import hashlib

import numpy as np
import pytest

from planscore import HashingEmbedder, SynthConfig, build_indexes, build_kb, generate
from planscore.core import ConstraintSpec, PlanRecord, ProtocolSpec


ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title} -- {detail}")


def make_spec(name="P", limits=None, kind="MaxDose", unit="Gy"):
    limits = limits or {"A": 50.0, "B": 25.0}
    return ProtocolSpec(name, tuple(ConstraintSpec(m, m.split("_")[0], kind, v, unit) for m, v in limits.items()))


def make_plan(plan_id="p1", protocol="P", **metrics):
    return PlanRecord(plan_id, protocol, {k: float(v) for k, v in metrics.items()})


class NoiseEmbedder:
    """Uninformative text channel: a pseudo-random unit vector per distinct string."""

    provider_id = "noise"

    def __init__(self, dimension=256):
        self.dimension = dimension

    def embed(self, text):
        seed = int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")
        v = np.random.default_rng(seed).normal(size=self.dimension)
        return (v / np.linalg.norm(v)).tolist()

    def embed_batch(self, texts):
        return [self.embed(t) for t in texts]


@pytest.fixture(scope="session")
def corpus():
    return generate(SynthConfig(seed=3, protocols=3, plans_per_protocol=24))


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder()


@pytest.fixture(scope="session")
def bundle(corpus, embedder):
    protocols, plans = corpus
    kb, held = build_kb(plans, protocols, split_fraction=0.2, seed=3)
    return kb, held, build_indexes(kb, embedder), embedder


RIG_LIMITS = (1.0, 3.0, 10.0, 30.0, 100.0, 300.0)


def rigged_tuning_setup(seed=0, n_protocols=3, n_plans=60, n_test=15):
    """Cohorts where normalized-vector similarity identifies each query's twin.

    Every test plan is a KB plan with its smallest- and largest-limit metrics
    traded by a factor r in [1.2, 1.5] (normalized values, gm unchanged). The
    twin is always a gm candidate and is nearest in normalized space, while
    raw distance is dominated by the large-limit metric that was perturbed.
    Text vectors are pseudo-random noise.
    """
    from planscore.scoring import normalize_plan, percentile_rank

    rng = np.random.default_rng(seed)
    protocols, plans, tests = [], [], []
    for p in range(n_protocols):
        spec = make_spec(f"R{p}", {f"M{i}": lim for i, lim in enumerate(RIG_LIMITS)})
        protocols.append(spec)
        norms = rng.uniform(20, 95, size=(n_plans, len(RIG_LIMITS)))
        for j in range(n_plans):
            plans.append(make_plan(f"R{p}-{j:03d}", spec.name, **{f"M{i}": norms[j, i] * RIG_LIMITS[i] / 100 for i in range(6)}))
        for t, j in enumerate(rng.choice(n_plans, n_test, replace=False)):
            r = rng.uniform(1.2, 1.5)
            n = norms[j].copy()
            n[5] *= r
            n[0] /= r
            tests.append(make_plan(f"R{p}-T{t:02d}", spec.name, **{f"M{i}": n[i] * RIG_LIMITS[i] / 100 for i in range(6)}))
    kb, _ = build_kb(plans, protocols, 0.0, seed=seed)
    emb = NoiseEmbedder()
    test_set = []
    for plan in tests:
        spec = kb.protocol(plan.protocol_name)
        cohort = [e.gm_score for e in kb.entries_for(spec.name)]
        test_set.append((plan, percentile_rank(normalize_plan(plan, spec).gm_score, cohort, member=False)))
    return kb, build_indexes(kb, emb), test_set, emb
