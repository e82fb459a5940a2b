"""HTTP facade over the loop: sessions, event streaming, studies, benchmarks.

Sessions run on background threads and publish their trace events into an
in-memory, per-session log guarded by a condition variable. The SSE endpoint
replays that log from any offset and then follows it live, so a client that
drops mid-stream can reconnect with ?from=<next seq> and lose nothing.
"""
from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .bench import canonical_report, run_benchmark
from .domain import EchoStudy
from .errors import ConfigError, SessionError
from .gateway import PolicyBackend
from .guidelines import build_reference_index
from .loop import SessionState, TraceEvent, run_session
from .personas import AdversarialPolicy, MeasurementPolicy
from .sim import (
    DifficultyMix,
    SimConfig,
    generate_benchmark,
    generate_studies,
    render_pixels,
)
from .tools import ToolContext, build_registry
from .vision import NoiseProfile, named_noise

TERMINAL_EVENTS = frozenset({"finish", "forced_answer", "aborted"})


def make_noise(name: str, seed: int, studies: list[EchoStudy]) -> NoiseProfile:
    try:
        return named_noise(name, seed, studies)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


# ---------------------------------------------------------------------------
# session records


@dataclass
class SessionRecord:
    session_id: str
    question: str
    study_id: str
    events: list[dict] = field(default_factory=list)
    condition: threading.Condition = field(default_factory=threading.Condition)
    abort_requested: bool = False
    done: bool = False
    state: SessionState | None = None
    error: str | None = None

    def emit(self, event: TraceEvent) -> None:
        with self.condition:
            self.events.append(
                {"session_id": event.session_id, "seq": event.seq, "kind": event.kind, "payload": event.payload}
            )
            self.condition.notify_all()

    def finish(self, state: SessionState | None, error: str | None = None) -> None:
        with self.condition:
            self.state = state
            self.error = error
            self.done = True
            self.condition.notify_all()

    def summary(self) -> dict[str, Any]:
        with self.condition:
            status = self.state.status.value if self.state is not None else "running"
            answer = None
            for event in reversed(self.events):
                if event["kind"] in ("finish", "forced_answer"):
                    answer = event["payload"]
                    break
            return {
                "session_id": self.session_id,
                "question": self.question,
                "study_id": self.study_id,
                "status": status,
                "steps": sum(1 for e in self.events if e["kind"] == "tool_result"),
                "event_count": len(self.events),
                "answer": answer,
                "error": self.error,
            }


# ---------------------------------------------------------------------------
# request bodies


class SessionRequest(BaseModel):
    question: str
    study_id: str
    persona: str = "optimal"
    noise: str = "zero"
    seed: int = 0
    include_feasibility: bool = True
    include_retrieval: bool = True
    step_budget: int = Field(default=15, ge=1, le=64)
    context_session_id: str | None = None


class BenchmarkRequest(BaseModel):
    noise: str = "zero"
    seed: int = 0
    easy: int = Field(default=10, ge=0)
    medium: int = Field(default=7, ge=0)
    difficult: int = Field(default=5, ge=0)
    include_feasibility: bool = True
    include_retrieval: bool = True


# ---------------------------------------------------------------------------
# app factory


def create_app(studies: list[EchoStudy] | None = None) -> FastAPI:
    app = FastAPI(title="echoloop", version="0.1.0")
    if studies is None:
        studies = generate_studies(SimConfig())
    by_id = {study.study_id: study for study in studies}
    guideline_index = build_reference_index()
    sessions: dict[str, SessionRecord] = {}
    pixel_cache: dict[str, np.ndarray] = {}
    lock = threading.Lock()
    counter = {"next": 0}

    def _record(session_id: str) -> SessionRecord:
        record = sessions.get(session_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return record

    def _study(study_id: str) -> EchoStudy:
        study = by_id.get(study_id)
        if study is None:
            raise HTTPException(status_code=404, detail=f"no study {study_id!r}")
        return study

    @app.get("/studies")
    def list_studies() -> list[dict]:
        return [
            {
                "study_id": s.study_id,
                "view": s.view.value,
                "frame_count": s.frame_count,
                "frame_rate": s.frame_rate,
                "pixel_scale_cm_per_px": s.pixel_scale_cm,
            }
            for s in studies
        ]

    @app.get("/studies/{study_id}")
    def study_detail(study_id: str) -> dict:
        s = _study(study_id)
        return {
            "study_id": s.study_id,
            "view": s.view.value,
            "frame_count": s.frame_count,
            "frame_rate": s.frame_rate,
            "pixel_scale_cm_per_px": s.pixel_scale_cm,
        }

    @app.get("/studies/{study_id}/frames/{frame}")
    def study_frame(study_id: str, frame: int) -> dict:
        study = _study(study_id)
        if not 0 <= frame < study.frame_count:
            raise HTTPException(status_code=404, detail=f"frame {frame} out of range")
        if study_id not in pixel_cache:
            pixel_cache[study_id] = render_pixels(study, 112, 112)
        pixels = pixel_cache[study_id][frame]
        return {
            "study_id": study_id,
            "frame": frame,
            "height": int(pixels.shape[0]),
            "width": int(pixels.shape[1]),
            "encoding": "base64/uint8",
            "pixels": base64.b64encode(pixels.tobytes()).decode("ascii"),
        }

    @app.get("/tools")
    def list_tools() -> list[dict]:
        return [d.to_wire() for d in build_registry().descriptors()]

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionRequest) -> dict:
        study = _study(body.study_id)
        question = body.question
        if body.context_session_id is not None:
            previous = _record(body.context_session_id)
            summary = previous.summary()
            if summary["answer"] is None:
                raise HTTPException(status_code=409, detail="context session has no answer yet")
            question = (
                f"Follow-up to a previous exchange. Previous question: {previous.question} "
                f"Previous answer: {summary['answer']['text']} "
                f"Current question: {body.question}"
            )

        noise = make_noise(body.noise, body.seed, studies)
        if body.persona == "adversarial":
            backend = PolicyBackend(AdversarialPolicy(salt=body.seed))
        elif body.persona in ("optimal", "measurement"):
            backend = PolicyBackend(MeasurementPolicy())
        else:
            raise HTTPException(status_code=422, detail=f"unknown persona {body.persona!r}")

        with lock:
            session_id = f"s{counter['next']:04d}"
            counter["next"] += 1
            record = SessionRecord(session_id=session_id, question=question, study_id=study.study_id)
            sessions[session_id] = record

        registry = build_registry(
            include_feasibility=body.include_feasibility, include_retrieval=body.include_retrieval
        )
        context = ToolContext(
            study=study,
            noise=noise,
            guideline_index=guideline_index if body.include_retrieval else None,
        )

        def runner() -> None:
            try:
                state = run_session(
                    question=question,
                    study=study,
                    registry=registry,
                    backend=backend,
                    context=context,
                    step_budget=body.step_budget,
                    session_id=session_id,
                    sink=record.emit,
                    should_abort=lambda: record.abort_requested,
                )
                record.finish(state)
            except SessionError as exc:
                record.finish(exc.state, error=str(exc))

        threading.Thread(target=runner, name=f"session-{session_id}", daemon=True).start()
        return {"session_id": session_id, "events_url": f"/sessions/{session_id}/events"}

    @app.get("/sessions/{session_id}")
    def session_detail(session_id: str) -> dict:
        return _record(session_id).summary()

    @app.post("/sessions/{session_id}/abort")
    def abort_session_endpoint(session_id: str) -> dict:
        record = _record(session_id)
        with record.condition:
            record.abort_requested = True
            already_done = record.done
        return {"session_id": session_id, "accepted": not already_done}

    def _event_stream(record: SessionRecord, start: int) -> Iterator[str]:
        index = max(start, 0)
        while True:
            with record.condition:
                while index >= len(record.events) and not record.done:
                    record.condition.wait(timeout=5.0)
                chunk = list(record.events[index:])
                done = record.done
            for event in chunk:
                yield f"id: {event['seq']}\ndata: {json.dumps(event, sort_keys=True)}\n\n"
                index += 1
            if done and index >= len(record.events):
                return

    @app.get("/sessions/{session_id}/events")
    def session_events(
        session_id: str,
        start: int = Query(default=0, alias="from", ge=0),
    ) -> StreamingResponse:
        record = _record(session_id)
        return StreamingResponse(_event_stream(record, start), media_type="text/event-stream")

    @app.post("/benchmarks/run")
    def benchmarks_run(body: BenchmarkRequest) -> dict:
        noise = make_noise(body.noise, body.seed, studies)
        mix = DifficultyMix(easy=body.easy, medium=body.medium, difficult=body.difficult)
        cases, warnings = generate_benchmark(studies, mix=mix, seed=body.seed)
        report = run_benchmark(
            cases,
            studies,
            noise=noise,
            include_feasibility=body.include_feasibility,
            include_retrieval=body.include_retrieval,
            guideline_index=guideline_index if body.include_retrieval else None,
        )
        doc = canonical_report(report)
        doc["warnings"] = warnings
        return doc

    return app
