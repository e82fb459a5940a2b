"""Iterative observe-think-act loop with a hard step budget.

Each step costs exactly one backend round trip and appends exactly one
history entry, malformed or not. The FINISH sentinel (case-insensitive,
checked before registry validation) triggers one additional round trip that
writes the final answer; exhausting the budget forces that same answer call,
so a session never exceeds budget + 1 round trips.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

from .domain import EchoStudy
from .errors import BackendUnavailable, MalformedCall, SessionError
from .gateway import Backend, extract_thought_and_call, render_history
from .prompts import ANSWER_INSTRUCTION
from .protocol import ToolCall, ToolRegistry, ToolResult, dispatch, parse_tool_call
from .tools import ToolContext

DEFAULT_STEP_BUDGET = 15


class SessionStatus(str, Enum):
    RUNNING = "running"
    FINISHED = "finished"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ABORTED = "aborted"


@dataclass(frozen=True)
class HistoryEntry:
    """One loop step: thought, attempted action, observed result."""

    thought: str
    action: ToolCall | None  # None when the emission failed to parse
    raw_action: str
    result: ToolResult


@dataclass(frozen=True)
class CitedValue:
    value: float
    unit: str | None
    source_index: int  # history entry whose payload contains the number


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    cited_values: tuple[CitedValue, ...] = ()
    cited_passages: tuple[str, ...] = ()
    grounded: bool = True
    ungrounded_values: tuple[float, ...] = ()


@dataclass
class SessionState:
    session_id: str
    question: str
    study_id: str
    step_budget: int = DEFAULT_STEP_BUDGET
    status: SessionStatus = SessionStatus.RUNNING
    history: list[HistoryEntry] = field(default_factory=list)
    answer: FinalAnswer | None = None


@dataclass(frozen=True)
class TraceEvent:
    session_id: str
    seq: int
    kind: str  # session_started | thought | tool_call | tool_result | finish | forced_answer | aborted
    payload: dict[str, Any]


TraceSink = Callable[[TraceEvent], None]


class _Emitter:
    def __init__(self, session_id: str, sink: TraceSink | None) -> None:
        self.session_id = session_id
        self.sink = sink
        self.seq = 0
        self.events: list[TraceEvent] = []

    def __call__(self, kind: str, payload: dict[str, Any]) -> None:
        event = TraceEvent(self.session_id, self.seq, kind, payload)
        self.seq += 1
        self.events.append(event)
        if self.sink is not None:
            self.sink(event)


# ---------------------------------------------------------------------------
# groundedness


_NUMBER = re.compile(r"(-?\d+(?:\.\d+)?)\s*(cm|mm)?\b")


def _payload_numbers(payload: Any, out: list[float]) -> None:
    if isinstance(payload, bool):
        return
    if isinstance(payload, (int, float)):
        out.append(float(payload))
    elif isinstance(payload, str):
        for match in _NUMBER.finditer(payload):
            out.append(float(match.group(1)))
    elif isinstance(payload, dict):
        for value in payload.values():
            _payload_numbers(value, out)
    elif isinstance(payload, (list, tuple)):
        for value in payload:
            _payload_numbers(value, out)


def _answer_claims(text: str) -> list[tuple[float, str | None, int]]:
    """Measurement-like numbers in an answer: unit-suffixed or decimal."""
    claims: list[tuple[float, str | None, int]] = []
    for match in _NUMBER.finditer(text):
        raw, unit = match.group(1), match.group(2)
        if unit is None and "." not in raw:
            continue  # bare integers are indices or prose, not claims
        decimals = len(raw.split(".")[1]) if "." in raw else 0
        claims.append((float(raw), unit, decimals))
    return claims


def build_final_answer(text: str, history: Sequence[HistoryEntry]) -> FinalAnswer:
    """Match every numeric claim in `text` against tool payloads in history.

    A claim printed with d decimals matches a payload number within half of
    its last displayed digit (and never looser than that; exact payloads
    match within 1e-6). Unmatched claims lower the grounded flag but are not
    a failure: derived quantities are computed, not observed.
    """
    per_entry: list[list[float]] = []
    for entry in history:
        numbers: list[float] = []
        if entry.result.ok:
            _payload_numbers(entry.result.payload, numbers)
        per_entry.append(numbers)

    cited: list[CitedValue] = []
    ungrounded: list[float] = []
    for value, unit, decimals in _answer_claims(text):
        candidates = [value] if unit != "mm" else [value / 10.0]
        tolerance = max(1e-6, 0.5 * 10.0 ** (-decimals) + 1e-9)
        source = None
        for idx, numbers in enumerate(per_entry):
            for candidate in candidates:
                if any(abs(candidate - n) <= tolerance for n in numbers):
                    source = idx
                    break
            if source is not None:
                break
        if source is None:
            ungrounded.append(value)
        else:
            cited.append(CitedValue(value=value, unit=unit, source_index=source))

    passages: list[str] = []
    for entry in history:
        if entry.result.ok:
            for hit in entry.result.payload.get("hits", []):
                if isinstance(hit, dict) and "passage_id" in hit and hit["passage_id"] not in passages:
                    passages.append(hit["passage_id"])

    return FinalAnswer(
        text=text,
        cited_values=tuple(cited),
        cited_passages=tuple(passages),
        grounded=not ungrounded,
        ungrounded_values=tuple(ungrounded),
    )


# ---------------------------------------------------------------------------
# the loop


def generate_answer(
    question: str,
    history: Sequence[HistoryEntry],
    registry: ToolRegistry,
    backend: Backend,
    study: EchoStudy | None = None,
) -> str:
    """One backend call over the rendered history plus the answer instruction."""
    messages = render_history(question, history, registry.descriptors(), study)
    messages.append({"role": "user", "content": ANSWER_INSTRUCTION})
    return backend.complete(messages)


def step(
    state: SessionState,
    registry: ToolRegistry,
    backend: Backend,
    context: ToolContext | None = None,
    study: EchoStudy | None = None,
    emit: Callable[[str, dict[str, Any]], None] | None = None,
) -> SessionState:
    """Advance a running session by exactly one backend round trip.

    Either the FINISH branch is taken (status flips to finished, history
    untouched, answer left for generate_answer) or exactly one HistoryEntry
    is appended; protocol errors become error results and the loop goes on.
    A terminal or budget-spent state is returned unchanged.
    """
    if state.status is not SessionStatus.RUNNING or len(state.history) >= state.step_budget:
        return state
    send = emit if emit is not None else lambda kind, payload: None

    messages = render_history(state.question, state.history, registry.descriptors(), study)
    try:
        text = backend.complete(messages)
    except BackendUnavailable as exc:
        state.status = SessionStatus.ABORTED
        send("aborted", {"reason": f"backend unavailable: {exc}"})
        raise SessionError(str(exc), state=state) from exc

    thought, call_raw = extract_thought_and_call(text)
    send("thought", {"step": len(state.history), "text": thought})

    call: ToolCall | None = None
    if call_raw is not None:
        try:
            call = parse_tool_call(call_raw)
        except MalformedCall:
            call = None

    if call is not None and call.is_finish:
        state.status = SessionStatus.FINISHED
        return state

    if call is None:
        result = ToolResult(ok=False, error_kind="Malformed", error_detail="no well-formed structured call in model output")
        send("tool_call", {"step": len(state.history), "raw": text, "parsed": None})
    else:
        send("tool_call", {"step": len(state.history), "raw": call.raw_text, "parsed": {"name": call.name, "arguments": call.arguments}})
        result = dispatch(registry, call, context)
    send("tool_result", {"step": len(state.history), "result": result.to_wire()})
    state.history.append(HistoryEntry(thought=thought, action=call, raw_action=text, result=result))
    return state


def run_session(
    question: str,
    study: EchoStudy,
    registry: ToolRegistry,
    backend: Backend,
    context: ToolContext | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
    session_id: str = "local",
    sink: TraceSink | None = None,
    should_abort: Callable[[], bool] | None = None,
) -> SessionState:
    """Run one question to completion; returns the terminal SessionState.

    Raises SessionError (with the partial state attached) only on backend
    transport failure; every model misbehavior is absorbed into history.
    """
    state = SessionState(
        session_id=session_id,
        question=question,
        study_id=study.study_id,
        step_budget=step_budget,
    )
    emit = _Emitter(session_id, sink)
    emit("session_started", {"question": question, "study_id": study.study_id, "step_budget": step_budget})

    while state.status is SessionStatus.RUNNING and len(state.history) < step_budget:
        if should_abort is not None and should_abort():
            state.status = SessionStatus.ABORTED
            emit("aborted", {"reason": "abort requested"})
            return state
        step(state, registry, backend, context, study, emit)

    forced = state.status is SessionStatus.RUNNING  # budget spent without FINISH
    try:
        text = generate_answer(question, state.history, registry, backend, study)
    except BackendUnavailable as exc:
        state.status = SessionStatus.ABORTED
        emit("aborted", {"reason": f"backend unavailable: {exc}"})
        raise SessionError(str(exc), state=state) from exc
    state.answer = build_final_answer(text, state.history)
    if forced:
        state.status = SessionStatus.BUDGET_EXHAUSTED
        emit("forced_answer", _answer_payload(state.answer))
    else:
        state.status = SessionStatus.FINISHED
        emit("finish", _answer_payload(state.answer))
    return state


def _answer_payload(answer: FinalAnswer) -> dict[str, Any]:
    return {
        "text": answer.text,
        "cited_values": [
            {"value": cv.value, "unit": cv.unit, "source_index": cv.source_index} for cv in answer.cited_values
        ],
        "cited_passages": list(answer.cited_passages),
        "grounded": answer.grounded,
        "ungrounded_values": list(answer.ungrounded_values),
    }


def abort_session(state: SessionState) -> SessionState:
    """Mark a running session aborted; terminal sessions are left untouched."""
    if state.status is SessionStatus.RUNNING:
        state.status = SessionStatus.ABORTED
    return state


def session_digest(state: SessionState) -> list:
    """Timing-free canonical view for determinism comparisons."""
    return [
        {
            "thought": entry.thought,
            "action": entry.action.serialize() if entry.action else entry.raw_action,
            "result": entry.result.to_wire(),
        }
        for entry in state.history
    ] + [
        {
            "status": state.status.value,
            "answer": _answer_payload(state.answer) if state.answer else None,
        }
    ]
