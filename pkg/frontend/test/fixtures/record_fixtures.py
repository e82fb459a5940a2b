"""Record console test fixtures straight off the HTTP service wire.

Every JSON file under this directory is a verbatim capture of what the
serve endpoints emit for a small hand-built study, so the console tests
exercise the real event grammar instead of hand-typed approximations.

Run from the repository root after installing the package:

    python3 frontend/test/fixtures/record_fixtures.py
"""
from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from unittest import mock

from fastapi.testclient import TestClient

from echoloop.domain import CycleParams, EchoStudy, EchoView, MeasurementKind, StudyQuality
from echoloop.service import create_app

OUT_DIR = Path(__file__).resolve().parent


def demo_study() -> EchoStudy:
    values = {
        MeasurementKind.IVS: (1.0, 1.3),
        MeasurementKind.LVID: (4.6, 3.0),
        MeasurementKind.LVPW: (0.9, 1.15),
        MeasurementKind.LA: (3.6, 3.1),
        MeasurementKind.AORTA: (3.0, 2.9),
        MeasurementKind.AORTIC_ROOT: (3.2, 3.05),
    }
    return EchoStudy(
        study_id="study_demo",
        view=EchoView.PLAX,
        frame_count=60,
        frame_rate=50.0,
        pixel_scale_cm=0.046,
        cycle=CycleParams(period_frames=30, offset_frames=0, values=values),
        quality=StudyQuality(visible={kind: True for kind in values}),
    )


def wait_done(client: TestClient, session_id: str) -> dict:
    for _ in range(200):
        doc = client.get(f"/sessions/{session_id}").json()
        if doc["status"] != "running":
            return doc
        time.sleep(0.02)
    raise RuntimeError(f"session {session_id} never finished")


def read_events(client: TestClient, session_id: str) -> list[dict]:
    """Replay the whole stream and return the decoded event dicts."""
    events = []
    with client.stream("GET", f"/sessions/{session_id}/events") as response:
        buffer = ""
        for chunk in response.iter_text():
            buffer += chunk
        for block in buffer.split("\n\n"):
            for line in block.splitlines():
                if line.startswith("data: "):
                    events.append(json.loads(line[len("data: "):]))
    return events


def run_and_capture(client: TestClient, body: dict) -> dict:
    created = client.post("/sessions", json=body)
    created.raise_for_status()
    session_id = created.json()["session_id"]
    summary = wait_done(client, session_id)
    return {"summary": summary, "events": read_events(client, session_id)}


class GatedPolicy:
    """Stands in for the measurement policy: one slow step, never FINISH."""

    def __init__(self, gate: threading.Event):
        self.gate = gate

    def __call__(self, messages):
        self.gate.wait(timeout=10.0)
        return (
            "THOUGHT: checking the cycle timing first.\n"
            'CALL: {"tool": "detect_phases", "arguments": {}}'
        )


def record_aborted(client: TestClient) -> dict:
    gate = threading.Event()
    policy = GatedPolicy(gate)
    with mock.patch("echoloop.service.MeasurementPolicy", lambda: policy):
        created = client.post(
            "/sessions",
            json={"question": "Measure the IVS at end-diastole.", "study_id": "study_demo", "noise": "zero"},
        )
        created.raise_for_status()
        session_id = created.json()["session_id"]
        time.sleep(0.05)  # let the runner block inside the gated backend
        aborted = client.post(f"/sessions/{session_id}/abort").json()
        assert aborted["accepted"], aborted
        gate.set()  # one step completes, then the abort flag is honoured
        summary = wait_done(client, session_id)
    return {"summary": summary, "events": read_events(client, session_id)}


def main() -> None:
    client = TestClient(create_app(studies=[demo_study()]))

    four_step = run_and_capture(
        client,
        {"question": "Measure the IVS at end-diastole.", "study_id": "study_demo", "noise": "zero"},
    )
    assert four_step["summary"]["steps"] == 4, four_step["summary"]

    verdict = run_and_capture(
        client,
        {"question": "Is the LA dilated at end-systole?", "study_id": "study_demo", "noise": "zero"},
    )

    exhausted = run_and_capture(
        client,
        {
            "question": "Measure the IVS at end-diastole.",
            "study_id": "study_demo",
            "noise": "zero",
            "persona": "adversarial",
            "step_budget": 5,
        },
    )
    assert exhausted["summary"]["status"] == "budget_exhausted", exhausted["summary"]

    aborted = record_aborted(client)
    assert aborted["summary"]["status"] == "aborted", aborted["summary"]

    first = run_and_capture(
        client,
        {"question": "Measure the IVS at end-diastole.", "study_id": "study_demo", "noise": "zero"},
    )
    follow_created = client.post(
        "/sessions",
        json={
            "question": "And at end-systole?",
            "study_id": "study_demo",
            "noise": "zero",
            "context_session_id": first["summary"]["session_id"],
        },
    )
    follow_created.raise_for_status()
    follow_id = follow_created.json()["session_id"]
    follow = {"summary": wait_done(client, follow_id), "events": read_events(client, follow_id)}

    fixtures = {
        "four-step-session.json": four_step,
        "verdict-session.json": verdict,
        "exhausted-session.json": exhausted,
        "aborted-session.json": aborted,
        "follow-up-pair.json": {"first": first, "second": follow},
        "frame-30.json": client.get("/studies/study_demo/frames/30").json(),
        "tools.json": client.get("/tools").json(),
    }
    for name, doc in fixtures.items():
        path = OUT_DIR / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path.relative_to(OUT_DIR.parent.parent)}")


if __name__ == "__main__":
    main()
