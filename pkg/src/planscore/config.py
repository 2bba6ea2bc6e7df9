"""Application configuration: providers, defaults and seed.

Values resolve in order: built-in defaults, config file, environment, then
explicit overrides (CLI flags).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .core import RetrievalConfig
from .embedding import HashingEmbedder, RemoteEmbedder
from .errors import InvalidConfig
from .io import read_json
from .orchestrator import RemoteChatBackend, scripted_mock_backend

ENV_PREFIX = "PLANSCORE_"


@dataclass(frozen=True)
class AppConfig:
    embedder: str = "fallback"
    embed_url: str | None = None
    embed_dimension: int = 256
    backend: str = "mock"
    chat_url: str | None = None
    chat_model: str = ""
    timeout: float = 60.0
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    seed: int = 0

    def __post_init__(self):
        if self.embedder not in ("fallback", "remote"):
            raise InvalidConfig(f"embedder must be 'fallback' or 'remote', got {self.embedder!r}")
        if self.backend not in ("mock", "remote"):
            raise InvalidConfig(f"backend must be 'mock' or 'remote', got {self.backend!r}")
        if self.embedder == "remote" and not self.embed_url:
            raise InvalidConfig("remote embedder requires an embedding URL")
        if self.backend == "remote" and not self.chat_url:
            raise InvalidConfig("remote chat backend requires a chat URL")
        if not self.timeout > 0:
            raise InvalidConfig("timeout must be positive")

    def make_embedder(self):
        if self.embedder == "remote":
            return RemoteEmbedder(self.embed_url, timeout=self.timeout)
        return HashingEmbedder(self.embed_dimension)

    def make_backend(self):
        if self.backend == "remote":
            return RemoteChatBackend(self.chat_url, model=self.chat_model, timeout=self.timeout)
        return scripted_mock_backend()

    def updated(self, **overrides: Any) -> "AppConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "AppConfig":
        data = dict(data)
        if "retrieval" in data and not isinstance(data["retrieval"], RetrievalConfig):
            data["retrieval"] = RetrievalConfig.from_dict(data["retrieval"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _env_overrides(env: Mapping[str, str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, cast in (
        ("embedder", str),
        ("embed_url", str),
        ("backend", str),
        ("chat_url", str),
        ("chat_model", str),
        ("timeout", float),
        ("seed", int),
    ):
        raw = env.get(ENV_PREFIX + key.upper())
        if raw:
            try:
                out[key] = cast(raw)
            except ValueError as exc:
                raise InvalidConfig(f"{ENV_PREFIX}{key.upper()}={raw!r}: {exc}") from exc
    return out


def load_app_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    **overrides: Any,
) -> AppConfig:
    base: dict[str, Any] = {}
    if path is not None:
        data = read_json(path)
        if not isinstance(data, dict):
            raise InvalidConfig(f"{path}: config must be an object")
        base.update(data)
    base.update(_env_overrides(os.environ if env is None else env))
    base.update({k: v for k, v in overrides.items() if v is not None})
    return AppConfig.from_mapping(base)
