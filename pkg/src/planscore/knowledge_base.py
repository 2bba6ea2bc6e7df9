"""Scored-plan knowledge base: construction, train/test split, indexes and persistence."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import KBEntry, PlanRecord, ProtocolSpec, validate_plan, validate_protocol
from .embedding import Embedder
from .errors import CorruptFile, FormatVersionMismatch, IoFailure, UnknownProtocol, ValidationError
from .scoring import score_cohort

FORMAT_VERSION = "planscore-kb/1"


def rng_stream(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


@dataclass(frozen=True)
class KnowledgeBase:
    protocols: dict[str, ProtocolSpec]
    entries: dict[str, list[KBEntry]]
    embedding_meta: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION

    def entries_for(self, protocol_name: str) -> list[KBEntry]:
        if protocol_name not in self.protocols:
            raise UnknownProtocol(f"protocol {protocol_name!r} is not in the knowledge base")
        return self.entries.get(protocol_name, [])

    def protocol(self, name: str) -> ProtocolSpec:
        try:
            return self.protocols[name]
        except KeyError:
            raise UnknownProtocol(f"protocol {name!r} is not in the knowledge base") from None

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def stats(self) -> dict:
        return {
            name: {
                "entries": len(self.entries.get(name, [])),
                "metrics": list(spec.metric_ids),
            }
            for name, spec in sorted(self.protocols.items())
        }

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "embedding_meta": dict(self.embedding_meta),
            "protocols": {n: p.to_dict() for n, p in sorted(self.protocols.items())},
            "entries": {
                n: [e.to_dict() for e in self.entries.get(n, [])] for n in sorted(self.protocols)
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeBase":
        version = data.get("version")
        if version != FORMAT_VERSION:
            raise FormatVersionMismatch(f"expected version {FORMAT_VERSION!r}, found {version!r}")
        protocols = {
            n: validate_protocol(ProtocolSpec.from_dict(p)) for n, p in data["protocols"].items()
        }
        entries = {n: [KBEntry.from_dict(e) for e in es] for n, es in data["entries"].items()}
        kb = cls(protocols, entries, dict(data.get("embedding_meta", {})), version)
        check_kb(kb)
        return kb


def check_kb(kb: KnowledgeBase) -> None:
    for name, entries in kb.entries.items():
        spec = kb.protocol(name)
        ids = set()
        for e in entries:
            if e.protocol_name != name:
                raise ValidationError(f"entry {e.plan_id!r} filed under {name!r}")
            validate_plan(e.as_plan(), spec)
            if set(e.normalized_metrics) != set(spec.metric_ids):
                raise ValidationError(f"entry {e.plan_id!r} normalized metrics mismatch")
            if not (e.gm_score > 0 and 0 < e.percentile < 100):
                raise ValidationError(f"entry {e.plan_id!r} has an out-of-range score")
            if e.plan_id in ids:
                raise ValidationError(f"duplicate plan id {e.plan_id!r} in {name!r}")
            ids.add(e.plan_id)


def build_kb(
    plans: Sequence[PlanRecord],
    protocols: Sequence[ProtocolSpec],
    split_fraction: float = 0.1,
    seed: int = 0,
    embedding_meta: dict | None = None,
) -> tuple[KnowledgeBase, list[tuple[PlanRecord, float]]]:
    """Score each protocol cohort in full, then hold out ``ceil(f*N)`` plans per protocol.

    Held-out plans keep the percentile they earned in the full cohort.
    """
    if not 0 <= split_fraction < 1:
        raise ValueError(f"split_fraction must lie in [0, 1), got {split_fraction}")
    specs = {p.name: validate_protocol(p) for p in protocols}
    grouped: dict[str, list[PlanRecord]] = {name: [] for name in specs}
    for plan in plans:
        if plan.protocol_name not in specs:
            raise UnknownProtocol(
                f"plan {plan.plan_id!r} references unknown protocol {plan.protocol_name!r}"
            )
        grouped[plan.protocol_name].append(plan)

    entries: dict[str, list[KBEntry]] = {}
    held_out: list[tuple[PlanRecord, float]] = []
    for name in sorted(specs):
        cohort = grouped[name]
        ids = [p.plan_id for p in cohort]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate plan ids in protocol {name!r}")
        scored = score_cohort(cohort, specs[name])
        n_test = math.ceil(split_fraction * len(scored))
        test_idx = set()
        if n_test:
            perm = rng_stream(seed, "split", name).permutation(len(scored))
            test_idx = set(perm[:n_test].tolist())
        entries[name] = [e for i, e in enumerate(scored) if i not in test_idx]
        held_out.extend(
            (cohort[i], scored[i].percentile) for i in range(len(scored)) if i in test_idx
        )
    kb = KnowledgeBase(specs, entries, dict(embedding_meta or {}))
    return kb, held_out


def format_value(x: float) -> str:
    return f"{x:#.6g}"


def render_plan_text(plan: KBEntry | PlanRecord, spec: ProtocolSpec) -> str:
    """Deterministic prose rendering of a plan's raw metrics in canonical order."""
    metrics = plan.raw_metrics if isinstance(plan, KBEntry) else plan.metrics
    parts = [f"Protocol {spec.name}."]
    for c in sorted(spec.constraints, key=lambda c: c.metric_id):
        parts.append(
            f"{c.metric_id} = {format_value(metrics[c.metric_id])} {c.unit} "
            f"(limit {format_value(c.limit)} {c.unit})."
        )
    return " ".join(parts)


@dataclass(frozen=True)
class ProtocolIndex:
    """Per-protocol parallel arrays; row ``i`` of every array describes ``plan_ids[i]``."""

    plan_ids: tuple[str, ...]
    gm_scores: np.ndarray
    percentiles: np.ndarray
    text_vectors: np.ndarray
    norm_vectors: np.ndarray
    raw_vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.plan_ids)


def build_index(entries: Sequence[KBEntry], spec: ProtocolSpec, embedder: Embedder) -> ProtocolIndex:
    order = spec.metric_ids
    n_metrics = len(order)
    texts = [render_plan_text(e, spec) for e in entries]
    if entries:
        text_vectors = np.asarray(embedder.embed_batch(texts), dtype=np.float64)
    else:
        text_vectors = np.zeros((0, embedder.dimension or 0))
    return ProtocolIndex(
        plan_ids=tuple(e.plan_id for e in entries),
        gm_scores=np.array([e.gm_score for e in entries], dtype=np.float64),
        percentiles=np.array([e.percentile for e in entries], dtype=np.float64),
        text_vectors=text_vectors,
        norm_vectors=np.array(
            [[e.normalized_metrics[m] for m in order] for e in entries], dtype=np.float64
        ).reshape(len(entries), n_metrics),
        raw_vectors=np.array(
            [[e.raw_metrics[m] for m in order] for e in entries], dtype=np.float64
        ).reshape(len(entries), n_metrics),
    )


def build_indexes(kb: KnowledgeBase, embedder: Embedder) -> dict[str, ProtocolIndex]:
    return {
        name: build_index(entries, kb.protocol(name), embedder)
        for name, entries in sorted(kb.entries.items())
        if entries
    }


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    try:
        Path(path).write_text(json.dumps(kb.to_dict(), indent=1, allow_nan=False), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_kb(path: str | Path) -> KnowledgeBase:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path} is not a valid knowledge-base document: {exc}") from exc
    if not isinstance(data, dict):
        raise CorruptFile(f"{path}: top level must be an object")
    try:
        return KnowledgeBase.from_dict(data)
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise CorruptFile(f"{path}: missing or malformed field: {exc}") from exc
    except (ValidationError, UnknownProtocol) as exc:
        raise CorruptFile(f"{path}: invalid content: {exc}") from exc
