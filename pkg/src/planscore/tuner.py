"""Gaussian-process minimization of the retrieval loss over weights and depth."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.stats import norm

from .core import K_MAX, K_MIN, PlanRecord, RetrievalConfig
from .embedding import Embedder
from .errors import EmptyInput, InsufficientCohort, OutOfBounds, SingularKernel
from .knowledge_base import KnowledgeBase, ProtocolIndex, rng_stream
from .metrics import report_from_predictions
from .retrieval import make_query, predict_query

log = logging.getLogger(__name__)

LENGTH_SCALES = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
BASE_JITTER = 1e-8
MAX_JITTER = 1e-4
N_RANDOM_CANDIDATES = 2048
N_LOCAL_CANDIDATES = 64
LOCAL_SIGMA = 0.05
SPACE_DIM = 4


def decode(point: Sequence[float]) -> RetrievalConfig:
    """Map a point of the unit 4-cube to a retrieval configuration.

    The first three coordinates are normalized onto the weight simplex; the
    last is mapped affinely onto ``[3, 10]`` and rounded.
    """
    p = [float(x) for x in point]
    if len(p) != SPACE_DIM:
        raise OutOfBounds(f"expected a {SPACE_DIM}-dimensional point, got {len(p)}")
    if any(not (0.0 <= x <= 1.0) for x in p):
        raise OutOfBounds(f"point {p} leaves the unit cube")
    w = p[:3]
    total = math.fsum(w)
    if total < 1e-12:
        weights = (1 / 3, 1 / 3, 1 / 3)
    else:
        weights = tuple(x / total for x in w)
    k = math.floor(K_MIN + (K_MAX - K_MIN) * p[3] + 0.5)
    k = min(K_MAX, max(K_MIN, k))
    return RetrievalConfig(*weights, k=k)


def encode(config: RetrievalConfig) -> tuple[float, float, float, float]:
    a, bn, br = config.weights()
    return (a, bn, br, (config.k - K_MIN) / (K_MAX - K_MIN))


def matern52(x1: np.ndarray, x2: np.ndarray, length_scale: float, variance: float = 1.0) -> np.ndarray:
    d = np.sqrt(np.maximum(((x1[:, None, :] - x2[None, :, :]) ** 2).sum(-1), 0.0))
    a = math.sqrt(5.0) * d / length_scale
    return variance * (1.0 + a + a * a / 3.0) * np.exp(-a)


@dataclass
class GPModel:
    """Zero-mean GP posterior over standardized losses."""

    points: np.ndarray
    losses: np.ndarray
    length_scale: float
    variance: float
    jitter: float
    y_mean: float
    y_std: float
    log_marginal_likelihood: float
    _chol: np.ndarray = field(repr=False)
    _alpha: np.ndarray = field(repr=False)

    def standardize(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation, both in standardized units."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ks = matern52(x, self.points, self.length_scale, self.variance)
        mu = ks @ self._alpha
        v = solve_triangular(self._chol, ks.T, lower=True)
        var = np.maximum(self.variance - (v * v).sum(0), 0.0)
        return mu, np.sqrt(var)


def _factor(k: np.ndarray) -> tuple[np.ndarray, float]:
    jitter = BASE_JITTER
    while jitter <= MAX_JITTER * (1 + 1e-9):
        try:
            return cholesky(k + jitter * np.eye(len(k)), lower=True), jitter
        except LinAlgError:
            jitter *= 10
    raise SingularKernel(f"kernel matrix not positive definite with jitter up to {MAX_JITTER}")


def gp_fit(points, losses) -> GPModel:
    """Fit a Matérn-5/2 GP, choosing the length scale by marginal likelihood."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(losses, dtype=float)
    if len(x) < 2 or len(x) != len(y):
        raise EmptyInput("GP fit needs at least two paired observations")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    variance = 1.0
    n = len(x)

    best = None
    for ell in LENGTH_SCALES:
        k = matern52(x, x, ell, variance)
        try:
            chol, jitter = _factor(k)
        except SingularKernel:
            continue
        alpha = cho_solve((chol, True), ys)
        lml = -0.5 * float(ys @ alpha) - float(np.log(np.diag(chol)).sum()) - 0.5 * n * math.log(2 * math.pi)
        if best is None or lml > best[0]:
            best = (lml, ell, jitter, chol, alpha)
    if best is None:
        raise SingularKernel("no length scale produced a decomposable kernel matrix")
    lml, ell, jitter, chol, alpha = best
    return GPModel(x, y, ell, variance, jitter, y_mean, y_std, lml, chol, alpha)


def ei_from_moments(mu, sigma, f_best):
    """Expected improvement for minimization given posterior moments."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    improvement = f_best - mu
    safe = np.where(sigma < 1e-12, 1.0, sigma)
    z = improvement / safe
    ei = improvement * norm.cdf(z) + safe * norm.pdf(z)
    ei = np.where(sigma < 1e-12, np.maximum(improvement, 0.0), ei)
    return np.maximum(ei, 0.0)


def expected_improvement(model: GPModel, candidates, best_loss: float) -> np.ndarray:
    mu, sigma = model.predict(candidates)
    return ei_from_moments(mu, sigma, float(model.standardize(best_loss)))


@dataclass(frozen=True)
class TraceEntry:
    point: tuple[float, ...]
    loss: float
    config: RetrievalConfig | None = None
    cached: bool = False

    def to_dict(self) -> dict:
        out = {"point": list(self.point), "loss": self.loss, "cached": self.cached}
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out


@dataclass
class TunerTrace:
    seed: int
    n_calls: int
    entries: list[TraceEntry] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return min(range(len(self.entries)), key=lambda i: (self.entries[i].loss, i))

    @property
    def best_loss(self) -> float:
        return self.entries[self.best_index].loss

    @property
    def best_point(self) -> tuple[float, ...]:
        return self.entries[self.best_index].point

    @property
    def best_config(self) -> RetrievalConfig | None:
        return self.entries[self.best_index].config

    @property
    def n_evaluations(self) -> int:
        return sum(1 for e in self.entries if not e.cached)

    def to_dict(self) -> dict:
        best = self.best_config
        return {
            "seed": self.seed,
            "n_calls": self.n_calls,
            "best_loss": self.best_loss,
            "best_point": list(self.best_point),
            "best_config": best.to_dict() if best is not None else None,
            "entries": [e.to_dict() for e in self.entries],
        }


def gp_minimize(
    objective: Callable[[tuple[float, ...]], float],
    n_calls: int = 50,
    n_init: int = 10,
    seed: int = 0,
    decoder: Callable[[Sequence[float]], Hashable] | None = None,
    dim: int = SPACE_DIM,
) -> TunerTrace:
    """Sequential GP minimization of ``objective`` over the unit cube.

    When ``decoder`` is given, points decoding to an already-seen value reuse
    the cached loss instead of calling ``objective`` again. The trace records
    every proposal either way. If ``objective`` raises, the partial trace is
    attached to the exception as ``partial_trace``.
    """
    if not n_calls >= n_init >= 2:
        raise ValueError(f"need n_calls >= n_init >= 2, got n_calls={n_calls}, n_init={n_init}")
    rng = rng_stream(seed, "tuner")
    trace = TunerTrace(seed=seed, n_calls=n_calls)
    cache: dict[Hashable, float] = {}

    def evaluate(point: np.ndarray) -> None:
        p = tuple(float(v) for v in point)
        key = decoder(p) if decoder is not None else p
        config = key if isinstance(key, RetrievalConfig) else None
        if key in cache:
            trace.entries.append(TraceEntry(p, cache[key], config, cached=True))
            return
        try:
            loss = float(objective(p))
        except Exception as exc:
            exc.partial_trace = trace
            raise
        cache[key] = loss
        trace.entries.append(TraceEntry(p, loss, config))

    for point in rng.random((n_init, dim)):
        evaluate(point)

    while len(trace.entries) < n_calls:
        x = np.array([e.point for e in trace.entries])
        y = np.array([e.loss for e in trace.entries])
        model = gp_fit(x, y)
        incumbent = np.asarray(trace.best_point)
        candidates = np.vstack(
            [
                rng.random((N_RANDOM_CANDIDATES, dim)),
                np.clip(incumbent + rng.normal(0.0, LOCAL_SIGMA, (N_LOCAL_CANDIDATES, dim)), 0.0, 1.0),
            ]
        )
        ei = expected_improvement(model, candidates, trace.best_loss)
        evaluate(candidates[int(np.argmax(ei))])
        log.debug("call %d: loss %.6f (best %.6f)", len(trace.entries), trace.entries[-1].loss, trace.best_loss)
    return trace


def retrieval_objective(
    kb: KnowledgeBase,
    indexes: Mapping[str, ProtocolIndex],
    test_set: Sequence[tuple[PlanRecord, float]],
    embedder: Embedder,
) -> Callable[[RetrievalConfig], float]:
    """Loss of a configuration on ``test_set``; queries are embedded once up front."""
    if not test_set:
        raise EmptyInput("tuning needs at least one test plan")
    queries = [(make_query(plan, kb, embedder), indexes.get(plan.protocol_name)) for plan, _ in test_set]
    truth = [float(t) for _, t in test_set]

    def loss(config: RetrievalConfig) -> float:
        results = []
        for query, index in queries:
            if index is None:
                raise InsufficientCohort(config.k, 0)
            results.append(predict_query(query, index, config))
        return report_from_predictions(config, results, truth).loss

    return loss


def tune_retrieval(
    kb: KnowledgeBase,
    indexes: Mapping[str, ProtocolIndex],
    test_set: Sequence[tuple[PlanRecord, float]],
    embedder: Embedder,
    n_calls: int = 50,
    seed: int = 0,
    n_init: int = 10,
) -> TunerTrace:
    loss = retrieval_objective(kb, indexes, test_set, embedder)
    return gp_minimize(lambda p: loss(decode(p)), n_calls=n_calls, n_init=n_init, seed=seed, decoder=decode)
