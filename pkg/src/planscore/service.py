"""Read-only HTTP service over a loaded knowledge base."""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .api import Engine, check_payload, explain_payload, retrieve_payload, score_payload
from .core import PlanRecord, ProtocolSpec, RetrievalConfig
from .errors import PlanScoreError
from .orchestrator import ChatBackend


class PlanRequest(BaseModel):
    plan: dict[str, Any]
    protocol: Optional[dict[str, Any]] = None
    alpha: Optional[float] = None
    beta_norm: Optional[float] = None
    beta_raw: Optional[float] = None
    k: Optional[int] = None

    def plan_record(self) -> PlanRecord:
        try:
            return PlanRecord.from_dict(self.plan)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise _BadRequest(f"malformed plan: {exc}") from exc

    def protocol_spec(self, engine: Engine, name: str) -> ProtocolSpec:
        if self.protocol is None:
            return engine.kb.protocol(name)
        try:
            return ProtocolSpec.from_dict(self.protocol)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise _BadRequest(f"malformed protocol: {exc}") from exc

    def retrieval_config(self, default: RetrievalConfig) -> RetrievalConfig:
        given = {
            "alpha": self.alpha,
            "beta_norm": self.beta_norm,
            "beta_raw": self.beta_raw,
            "k": self.k,
        }
        if all(v is None for v in given.values()):
            return default
        merged = {**default.to_dict(), **{k: v for k, v in given.items() if v is not None}}
        return RetrievalConfig.from_dict(merged)


class _BadRequest(PlanScoreError):
    category = "BadRequest"


def create_app(engine: Engine, backend: ChatBackend) -> FastAPI:
    app = FastAPI(title="planscore", docs_url=None, redoc_url=None)

    @app.exception_handler(PlanScoreError)
    async def _domain_error(request: Request, exc: PlanScoreError):
        return JSONResponse(status_code=exc.http_status, content=exc.to_dict())

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "entries": len(engine.kb)}

    @app.get("/v1/kb/stats")
    def kb_stats():
        return {"version": engine.kb.version, "protocols": engine.kb.stats()}

    @app.post("/v1/score")
    def score(req: PlanRequest):
        plan = req.plan_record()
        spec = req.protocol_spec(engine, plan.protocol_name)
        kb = engine.kb if spec.name in engine.kb.protocols else None
        return score_payload(plan, spec, kb)

    @app.post("/v1/retrieve")
    def retrieve(req: PlanRequest):
        return retrieve_payload(req.plan_record(), engine, req.retrieval_config(engine.config))

    @app.post("/v1/check")
    def check(req: PlanRequest):
        plan = req.plan_record()
        return check_payload(plan, req.protocol_spec(engine, plan.protocol_name))

    @app.post("/v1/explain")
    def explain(req: PlanRequest):
        return explain_payload(req.plan_record(), engine, backend, req.retrieval_config(engine.config))

    return app
