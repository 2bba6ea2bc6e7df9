"""Plan, protocol and held-out-set files.

One JSON document per plan or protocol. Directory reads are sorted by file
name so results never depend on filesystem order.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any

from .core import PlanRecord, ProtocolSpec, RetrievalConfig
from .errors import CorruptFile, IoFailure

MANIFEST = "manifest.json"


def read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path} is not valid JSON: {exc}") from exc


def write_json(path: str | Path, data: Any) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _parse(path, loader):
    data = read_json(path)
    try:
        return loader(data)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorruptFile(f"{path}: malformed document: {exc}") from exc


def read_plan(path: str | Path) -> PlanRecord:
    return _parse(path, PlanRecord.from_dict)


def read_protocol(path: str | Path) -> ProtocolSpec:
    return _parse(path, ProtocolSpec.from_dict)


def read_config(path: str | Path) -> RetrievalConfig:
    """Read a retrieval config, or the best config out of a tuning trace."""

    def load(data):
        if isinstance(data, dict) and isinstance(data.get("best_config"), dict):
            data = data["best_config"]
        return RetrievalConfig.from_dict(data)

    return _parse(path, load)


def _json_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise IoFailure(f"{d} is not a directory")
    return sorted(p for p in d.glob("*.json") if p.name != MANIFEST)


def read_plans(directory: str | Path) -> list[PlanRecord]:
    return [read_plan(p) for p in _json_files(directory)]


def read_protocols(directory: str | Path) -> list[ProtocolSpec]:
    return [read_protocol(p) for p in _json_files(directory)]


def safe_filename(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def write_plan(directory: str | Path, plan: PlanRecord) -> Path:
    path = Path(directory) / f"{safe_filename(plan.plan_id)}.json"
    write_json(path, plan.to_dict())
    return path


def write_protocol(directory: str | Path, spec: ProtocolSpec) -> Path:
    path = Path(directory) / f"{safe_filename(spec.name)}.json"
    write_json(path, spec.to_dict())
    return path


def write_held_out(directory: str | Path, held_out: list[tuple[PlanRecord, float]]) -> Path:
    """Write held-out plans plus a manifest of their true percentiles."""
    directory = Path(directory)
    rows = []
    for plan, percentile in held_out:
        path = write_plan(directory, plan)
        rows.append({"file": path.name, "plan_id": plan.plan_id, "true_percentile": percentile})
    manifest = directory / MANIFEST
    write_json(manifest, {"plans": rows})
    return manifest


def read_held_out(directory: str | Path) -> list[tuple[PlanRecord, float]]:
    directory = Path(directory)
    manifest = read_json(directory / MANIFEST)
    try:
        rows = manifest["plans"]
        return [(read_plan(directory / r["file"]), float(r["true_percentile"])) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{directory / MANIFEST}: malformed manifest: {exc}") from exc
