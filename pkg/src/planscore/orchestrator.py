"""Tool-augmented plan-evaluation sessions and their consistency check.

A chat backend sees the conversation and the tool schemas and answers with
either a tool call or final text. :func:`run_session` executes each tool
call against the real retrieval and constraint modules and feeds the
structured result back unchanged.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import httpx

from .constraints import check_constraints
from .core import PlanRecord, PredictionResult, RetrievalConfig, ViolationReport, validate_plan
from .embedding import Embedder
from .errors import BackendFailure, PlanScoreError
from .knowledge_base import KnowledgeBase, ProtocolIndex
from .retrieval import predict

RETRIEVE = "retrieve_and_predict"
CHECK = "check_constraints"
EXPECTED_SEQUENCE = (RETRIEVE, CHECK)
MAX_TURNS = 8
AGREEMENT_TOLERANCE = 0.005

SYSTEM_PROMPT = (
    "You evaluate radiotherapy treatment plans against their clinical protocol. "
    f"First call {RETRIEVE} to obtain percentile estimates from similar historical plans. "
    f"Then call {CHECK} to find violated dose-volume constraints. "
    "Finally reply with one summary in exactly this form: "
    '"Plan <id> (<protocol>): nearest-neighbor percentile <nn>; weighted average <avg>; '
    'weighted median <med>. Violated constraints: <comma-separated metric ids or none>." '
    "Report numbers with 4 decimal places, copied from the tool results."
)

SUMMARY_TEMPLATE = (
    "Plan {plan_id} ({protocol}): nearest-neighbor percentile {nn:.4f}; "
    "weighted average {avg:.4f}; weighted median {med:.4f}. Violated constraints: {violated}."
)

_PLAN_PARAMETERS = {
    "type": "object",
    "properties": {
        "plan": {
            "type": "object",
            "properties": {
                "plan_id": {"type": "string"},
                "protocol_name": {"type": "string"},
                "metrics": {"type": "object", "additionalProperties": {"type": "number"}},
            },
            "required": ["plan_id", "protocol_name", "metrics"],
        }
    },
    "required": ["plan"],
}


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: dict
    result: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
            "result": self.result,
        }


TOOLS: tuple[ToolSchema, ...] = (
    ToolSchema(
        RETRIEVE,
        "Retrieve similar historical plans from the protocol-matched knowledge base "
        "and predict the plan's percentile.",
        _PLAN_PARAMETERS,
        {
            "type": "object",
            "properties": {
                "nn_percentile": {"type": "number"},
                "weighted_avg_percentile": {"type": "number"},
                "weighted_median_percentile": {"type": "number"},
                "neighbors": {"type": "array"},
            },
        },
    ),
    ToolSchema(
        CHECK,
        "List the protocol constraints the plan violates.",
        _PLAN_PARAMETERS,
        {"type": "object", "properties": {"violations": {"type": "array"}}},
    ),
)


@dataclass(frozen=True)
class Message:
    """One conversation turn.

    ``role`` is one of ``system``, ``user``, ``assistant``, ``tool_call`` or
    ``tool_result``. Tool turns carry ``name`` and a structured ``payload``.
    """

    role: str
    content: str = ""
    name: str | None = None
    payload: Any = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"role": self.role}
        if self.content:
            out["content"] = self.content
        if self.name is not None:
            out["name"] = self.name
        if self.payload is not None:
            out["payload"] = self.payload
        return out


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict


@dataclass(frozen=True)
class FinalText:
    content: str


class ChatBackend(Protocol):
    def respond(self, messages: Sequence[Message], tools: Sequence[ToolSchema]) -> ToolCall | FinalText: ...


class ScriptedMockBackend:
    """Deterministic backend that follows the expected tool sequence.

    It calls retrieval, then the constraint check, then writes the summary
    template from the exact tool results it received.
    """

    def respond(self, messages: Sequence[Message], tools: Sequence[ToolSchema]) -> ToolCall | FinalText:
        plan = next(json.loads(m.content)["plan"] for m in messages if m.role == "user")
        results = {m.name: m.payload for m in messages if m.role == "tool_result"}
        if RETRIEVE not in results:
            return ToolCall(RETRIEVE, {"plan": plan})
        if CHECK not in results:
            return ToolCall(CHECK, {"plan": plan})
        pred = results[RETRIEVE]
        violated = [v["metric_id"] for v in results[CHECK]["violations"]]
        return FinalText(
            SUMMARY_TEMPLATE.format(
                plan_id=plan["plan_id"],
                protocol=plan["protocol_name"],
                nn=pred["nn_percentile"],
                avg=pred["weighted_avg_percentile"],
                med=pred["weighted_median_percentile"],
                violated=", ".join(violated) if violated else "none",
            )
        )


def scripted_mock_backend() -> ScriptedMockBackend:
    return ScriptedMockBackend()


class RemoteChatBackend:
    """Generic tool-calling client.

    Posts ``{"model", "messages", "tools"}`` and expects either
    ``{"tool_call": {"name", "arguments"}}`` or ``{"content": "..."}``.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "",
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url
        self.model = model
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def respond(self, messages: Sequence[Message], tools: Sequence[ToolSchema]) -> ToolCall | FinalText:
        body = {
            "model": self.model,
            "messages": [m.to_dict() for m in messages],
            "tools": [t.to_dict() for t in tools],
        }
        try:
            resp = self._client.post(self.base_url, json=body, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendFailure(f"chat backend request failed: {exc}") from exc
        if isinstance(data, dict) and isinstance(data.get("tool_call"), dict):
            call = data["tool_call"]
            args = call.get("arguments", {})
            if isinstance(args, str):
                try:
                    args = json.loads(args)
                except ValueError as exc:
                    raise BackendFailure(f"tool arguments are not valid JSON: {exc}") from exc
            return ToolCall(str(call.get("name", "")), dict(args or {}))
        if isinstance(data, dict) and isinstance(data.get("content"), str):
            return FinalText(data["content"])
        raise BackendFailure(f"chat backend returned neither a tool call nor content: {data!r}")


@dataclass(frozen=True)
class ParsedSummary:
    nn: float | None
    weighted_avg: float | None
    weighted_median: float | None
    violated: tuple[str, ...] | None

    @property
    def malformed(self) -> bool:
        return self.nn is None or self.weighted_avg is None or self.weighted_median is None

    def to_dict(self) -> dict:
        return {
            "nn": self.nn,
            "weighted_avg": self.weighted_avg,
            "weighted_median": self.weighted_median,
            "violated": list(self.violated) if self.violated is not None else None,
            "malformed": self.malformed,
        }


_NUMBER = r"([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"
_NN_RE = re.compile(r"nearest[\s-]*neighbou?r(?:\s+percentile)?\s*[:=]?\s*(?:of\s+|is\s+)?" + _NUMBER, re.I)
_AVG_RE = re.compile(r"weighted[\s-]+average(?:\s+percentile)?\s*[:=]?\s*(?:of\s+|is\s+)?" + _NUMBER, re.I)
_MED_RE = re.compile(r"weighted[\s-]+median(?:\s+percentile)?\s*[:=]?\s*(?:of\s+|is\s+)?" + _NUMBER, re.I)
_VIOLATED_RE = re.compile(r"violated\s+constraints?\s*:\s*(.*?)(?:\.(?=\s|$)|\n|$)", re.I)


def parse_summary(text: str) -> ParsedSummary:
    """Pull the three percentile figures and the violated-constraint list out of free text."""

    def number(pattern: re.Pattern) -> float | None:
        m = pattern.search(text)
        return float(m.group(1)) if m else None

    violated = None
    m = _VIOLATED_RE.search(text)
    if m:
        body = m.group(1).strip()
        if body.lower() in ("", "none", "no", "no violations"):
            violated = ()
        else:
            violated = tuple(part.strip() for part in body.split(",") if part.strip())
    return ParsedSummary(number(_NN_RE), number(_AVG_RE), number(_MED_RE), violated)


@dataclass(frozen=True)
class ToolExchange:
    name: str
    arguments: dict
    result: Any
    error: str | None = None

    def to_dict(self) -> dict:
        out = {"name": self.name, "arguments": self.arguments, "result": self.result}
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class SessionOutcome:
    plan_id: str
    summary_text: str = ""
    tool_trace: list[ToolExchange] = field(default_factory=list)
    parsed: ParsedSummary | None = None
    violations: list[str] = field(default_factory=list)
    messages: list[Message] = field(default_factory=list, repr=False)

    @property
    def sequence(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tool_trace)

    @property
    def malformed(self) -> bool:
        return (
            self.parsed is None
            or self.parsed.malformed
            or self.sequence[:2] != EXPECTED_SEQUENCE
            or bool(self.violations)
        )

    def to_dict(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "summary": self.summary_text,
            "tool_trace": [t.to_dict() for t in self.tool_trace],
            "parsed": self.parsed.to_dict() if self.parsed else None,
            "violations": list(self.violations),
            "malformed": self.malformed,
        }


def _plan_from_arguments(arguments: Mapping[str, Any], fallback: PlanRecord) -> PlanRecord:
    data = arguments.get("plan") if isinstance(arguments, Mapping) else None
    if not isinstance(data, Mapping):
        return fallback
    return PlanRecord.from_dict(data)


def run_session(
    plan: PlanRecord,
    kb: KnowledgeBase,
    indexes: Mapping[str, ProtocolIndex],
    config: RetrievalConfig,
    embedder: Embedder,
    backend: ChatBackend,
    max_turns: int = MAX_TURNS,
) -> SessionOutcome:
    """Drive one tool-augmented evaluation of ``plan``.

    Unknown or out-of-order tool calls are recorded in
    ``outcome.violations`` rather than raised. Backend transport errors
    propagate as :class:`BackendFailure`.
    """
    spec = kb.protocol(plan.protocol_name)
    validate_plan(plan, spec)
    messages = [
        Message("system", SYSTEM_PROMPT),
        Message("user", json.dumps({"plan": plan.to_dict()})),
    ]
    outcome = SessionOutcome(plan_id=plan.plan_id, messages=messages)

    for _ in range(max_turns):
        try:
            reply = backend.respond(list(messages), TOOLS)
        except BackendFailure:
            raise
        except Exception as exc:
            raise BackendFailure(f"chat backend raised: {exc}") from exc

        if isinstance(reply, FinalText):
            messages.append(Message("assistant", reply.content))
            outcome.summary_text = reply.content
            outcome.parsed = parse_summary(reply.content)
            if not outcome.tool_trace:
                outcome.violations.append("NoToolCalls")
            return outcome

        messages.append(Message("tool_call", name=reply.name, payload=reply.arguments))
        position = len(outcome.tool_trace)
        if reply.name not in (RETRIEVE, CHECK):
            outcome.violations.append(f"ToolSequenceViolation: unknown tool {reply.name!r}")
            result: Any = {"error": "UnknownTool", "message": f"no tool named {reply.name!r}"}
            outcome.tool_trace.append(ToolExchange(reply.name, reply.arguments, None, "UnknownTool"))
            messages.append(Message("tool_result", name=reply.name, payload=result))
            continue
        if position < len(EXPECTED_SEQUENCE) and reply.name != EXPECTED_SEQUENCE[position]:
            outcome.violations.append(
                f"ToolSequenceViolation: {reply.name!r} at step {position + 1}, "
                f"expected {EXPECTED_SEQUENCE[position]!r}"
            )

        error = None
        try:
            target = _plan_from_arguments(reply.arguments, plan)
            if reply.name == RETRIEVE:
                result = predict(target, kb, indexes, config, embedder).to_dict()
            else:
                result = check_constraints(target, kb.protocol(target.protocol_name)).to_dict()
        except (PlanScoreError, KeyError, TypeError, ValueError) as exc:
            error = getattr(exc, "category", type(exc).__name__)
            result = {"error": error, "message": str(exc)}
        outcome.tool_trace.append(ToolExchange(reply.name, reply.arguments, result, error))
        messages.append(Message("tool_result", name=reply.name, payload=result))

    outcome.violations.append(f"TurnLimitExceeded: no final summary after {max_turns} turns")
    return outcome


@dataclass(frozen=True)
class AgreementRecord:
    nn: bool
    weighted_avg: bool
    weighted_median: bool
    constraints: bool
    sequence: bool

    @property
    def overall(self) -> bool:
        """Percentiles and violation set agree; the tool sequence is reported separately."""
        return self.nn and self.weighted_avg and self.weighted_median and self.constraints

    def to_dict(self) -> dict:
        return {
            "nn": self.nn,
            "weighted_avg": self.weighted_avg,
            "weighted_median": self.weighted_median,
            "constraints": self.constraints,
            "sequence": self.sequence,
            "overall": self.overall,
        }


def verify_consistency(
    outcome: SessionOutcome,
    prediction: PredictionResult,
    report: ViolationReport,
    tolerance: float = AGREEMENT_TOLERANCE,
) -> AgreementRecord:
    """Compare what the summary claims with direct module outputs."""
    parsed = outcome.parsed or ParsedSummary(None, None, None, None)

    def close(value: float | None, reference: float) -> bool:
        return value is not None and abs(value - reference) <= tolerance

    return AgreementRecord(
        nn=close(parsed.nn, prediction.nn_percentile),
        weighted_avg=close(parsed.weighted_avg, prediction.weighted_avg_percentile),
        weighted_median=close(parsed.weighted_median, prediction.weighted_median_percentile),
        constraints=parsed.violated is not None and set(parsed.violated) == set(report.metric_ids),
        sequence=outcome.sequence[:2] == EXPECTED_SEQUENCE,
    )


def explain_plan(
    plan: PlanRecord,
    kb: KnowledgeBase,
    indexes: Mapping[str, ProtocolIndex],
    config: RetrievalConfig,
    embedder: Embedder,
    backend: ChatBackend,
) -> tuple[SessionOutcome, AgreementRecord]:
    """Run a session and verify it against direct module calls."""
    outcome = run_session(plan, kb, indexes, config, embedder, backend)
    reference = predict(plan, kb, indexes, config, embedder)
    report = check_constraints(plan, kb.protocol(plan.protocol_name))
    return outcome, verify_consistency(outcome, reference, report)
