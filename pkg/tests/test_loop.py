"""Agent loop tests: step budget, trace composition, answer grounding.

Event-count bookkeeping: a finished session with H tool steps emits
session_started + 3H step events + the finishing thought + finish, i.e.
3H + 3 events; an exhausted one emits 3H + 2 ending in forced_answer.
"""
from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echoloop.errors import BackendUnavailable, SessionError
from echoloop.gateway import (
    DEFAULT_FINISH_TEXT,
    CountingBackend,
    PolicyBackend,
    ScriptedBackend,
    is_answer_request,
)
from echoloop.loop import (
    DEFAULT_STEP_BUDGET,
    CitedValue,
    HistoryEntry,
    SessionState,
    SessionStatus,
    abort_session,
    build_final_answer,
    generate_answer,
    run_session,
    session_digest,
    step,
)
from echoloop.prompts import ANSWER_INSTRUCTION
from echoloop.protocol import ToolResult
from echoloop.tools import ToolContext, build_registry
from echoloop.vision import NoiseProfile

from conftest import make_plax_study

CALL_PHASES = 'Find the cycle first.\n{"name": "detect_phases", "arguments": {}}'
CALL_FEAS = 'Check what frame 0 supports.\n{"name": "predict_feasibility", "arguments": {"frame": 0}}'
CALL_MEASURE = 'Caliper on the LV cavity.\n{"name": "measure", "arguments": {"kind": "LVID", "frame": 0}}'
CALL_UNKNOWN = 'Try doppler.\n{"name": "doppler_sweep", "arguments": {}}'


@pytest.fixture()
def study():
    return make_plax_study()


@pytest.fixture()
def registry():
    return build_registry()


def _context(study):
    return ToolContext(study=study, noise=NoiseProfile.zero())


def _run(study, registry, backend, **kwargs):
    return run_session(
        "What is the LVID at end-diastole?", study, registry, backend, context=_context(study), **kwargs
    )


class TestSessionOutcomes:
    def test_three_tool_steps_then_finish(self, study, registry):
        backend = ScriptedBackend.from_texts(
            [CALL_PHASES, CALL_FEAS, CALL_MEASURE],
            answer_text="LVID at end-diastole: 4.60 cm.",
        )
        state = _run(study, registry, backend)
        assert state.status is SessionStatus.FINISHED
        assert len(state.history) == 3
        assert state.history[2].result.payload["value_cm"] == 4.6
        answer = state.answer
        assert "4.60" in answer.text
        assert answer.grounded
        assert answer.cited_values[0].value == 4.6
        assert answer.cited_values[0].source_index == 2

    def test_immediate_finish_keeps_history_empty(self, study, registry):
        state = _run(study, registry, ScriptedBackend(answer_text="No measurements were needed."))
        assert state.status is SessionStatus.FINISHED
        assert state.history == []
        assert state.answer.text == "No measurements were needed."

    def test_never_finishing_backend_exhausts_budget(self, study, registry):
        counting = CountingBackend(ScriptedBackend.from_texts([CALL_FEAS] * 40, answer_text="Out of steps."))
        state = _run(study, registry, counting)
        assert state.status is SessionStatus.BUDGET_EXHAUSTED
        assert len(state.history) == DEFAULT_STEP_BUDGET == 15
        assert counting.calls == 16
        assert state.answer.text == "Out of steps."

    def test_unknown_tool_is_absorbed_and_loop_continues(self, study, registry):
        backend = ScriptedBackend.from_texts([CALL_UNKNOWN, CALL_MEASURE], answer_text="4.60 cm.")
        state = _run(study, registry, backend)
        assert state.status is SessionStatus.FINISHED
        assert len(state.history) == 2
        first = state.history[0]
        assert first.result.ok is False
        assert first.result.error_kind == "UnknownTool"
        assert first.action is not None  # parsed fine, failed validation

    def test_prose_only_emission_becomes_malformed_entry(self, study, registry):
        backend = ScriptedBackend.from_texts(["Let me ponder the ultrasound."], answer_text="Done.")
        state = _run(study, registry, backend)
        entry = state.history[0]
        assert entry.action is None
        assert entry.result.error_kind == "Malformed"
        assert entry.raw_action == "Let me ponder the ultrasound."
        assert state.status is SessionStatus.FINISHED

    def test_zero_budget_forces_answer_in_one_round_trip(self, study, registry):
        counting = CountingBackend(ScriptedBackend(answer_text="Nothing ran."))
        state = _run(study, registry, counting, step_budget=0)
        assert state.status is SessionStatus.BUDGET_EXHAUSTED
        assert state.history == []
        assert counting.calls == 1


class TestStepContract:
    def test_finish_flips_status_without_touching_history(self, study, registry):
        state = SessionState("s", "q", study.study_id)
        out = step(state, registry, ScriptedBackend(), context=_context(study), study=study)
        assert out is state
        assert state.status is SessionStatus.FINISHED
        assert state.history == []
        assert state.answer is None  # the answer round trip belongs to run_session

    def test_one_entry_per_step(self, study, registry):
        state = SessionState("s", "q", study.study_id)
        backend = ScriptedBackend.from_texts([CALL_FEAS, CALL_MEASURE])
        step(state, registry, backend, context=_context(study), study=study)
        assert len(state.history) == 1
        step(state, registry, backend, context=_context(study), study=study)
        assert len(state.history) == 2
        assert state.history[1].result.payload["value_cm"] == 4.6

    def test_terminal_state_is_a_no_op(self, study, registry):
        state = SessionState("s", "q", study.study_id, status=SessionStatus.FINISHED)
        counting = CountingBackend(ScriptedBackend())
        step(state, registry, counting, context=_context(study), study=study)
        assert counting.calls == 0

    def test_spent_budget_is_a_no_op(self, study, registry):
        state = SessionState("s", "q", study.study_id, step_budget=0)
        counting = CountingBackend(ScriptedBackend())
        step(state, registry, counting, context=_context(study), study=study)
        assert counting.calls == 0
        assert state.status is SessionStatus.RUNNING


class TestTraceEvents:
    def test_finished_session_event_order(self, study, registry):
        events = []
        backend = ScriptedBackend.from_texts([CALL_PHASES, CALL_FEAS, CALL_MEASURE], answer_text="4.60 cm.")
        _run(study, registry, backend, sink=events.append)
        kinds = [e.kind for e in events]
        assert kinds == (
            ["session_started"]
            + ["thought", "tool_call", "tool_result"] * 3
            + ["thought", "finish"]
        )
        assert [e.seq for e in events] == list(range(len(events)))
        assert len(events) == 3 * 3 + 3
        assert all(e.session_id == "local" for e in events)
        assert events[-1].payload["grounded"] is True

    def test_exhausted_session_event_order(self, study, registry):
        events = []
        backend = ScriptedBackend.from_texts([CALL_FEAS] * 10, answer_text="No verdict.")
        _run(study, registry, backend, step_budget=4, sink=events.append)
        kinds = [e.kind for e in events]
        assert kinds == ["session_started"] + ["thought", "tool_call", "tool_result"] * 4 + ["forced_answer"]
        assert [e.seq for e in events] == list(range(3 * 4 + 2))

    def test_abort_hook_stops_before_any_step(self, study, registry):
        events = []
        counting = CountingBackend(ScriptedBackend())
        state = _run(study, registry, counting, sink=events.append, should_abort=lambda: True)
        assert state.status is SessionStatus.ABORTED
        assert [e.kind for e in events] == ["session_started", "aborted"]
        assert counting.calls == 0
        assert state.answer is None

    def test_abort_hook_mid_session(self, study, registry):
        events = []
        flags = iter([False, False, True])
        backend = ScriptedBackend.from_texts([CALL_FEAS] * 10)
        state = _run(study, registry, backend, sink=events.append, should_abort=lambda: next(flags))
        assert state.status is SessionStatus.ABORTED
        assert len(state.history) == 2
        assert events[-1].kind == "aborted"


class _DownBackend:
    def complete(self, messages):
        raise BackendUnavailable("socket closed")


class _AnswerOnlyDown:
    def complete(self, messages):
        if is_answer_request(messages):
            raise BackendUnavailable("answer endpoint down")
        return DEFAULT_FINISH_TEXT


class TestBackendFailure:
    def test_transport_failure_raises_with_partial_state(self, study, registry):
        events = []
        with pytest.raises(SessionError) as info:
            _run(study, registry, _DownBackend(), sink=events.append)
        assert info.value.state.status is SessionStatus.ABORTED
        assert events[-1].kind == "aborted"
        assert "backend unavailable" in events[-1].payload["reason"]

    def test_failure_during_answer_call(self, study, registry):
        with pytest.raises(SessionError) as info:
            _run(study, registry, _AnswerOnlyDown())
        state = info.value.state
        assert state.status is SessionStatus.ABORTED
        assert state.answer is None


def _entry(payload=None, ok=True):
    if ok:
        result = ToolResult(ok=True, payload=payload or {})
    else:
        result = ToolResult(ok=False, error_kind="ExecutionFailure", error_detail="boom", payload=payload or {})
    return HistoryEntry(thought="t", action=None, raw_action="raw", result=result)


class TestGroundedness:
    def test_cited_value_points_at_source_entry(self):
        history = [_entry({"frame": 0}), _entry({"value_cm": 4.6})]
        answer = build_final_answer("LVID measures 4.60 cm at end-diastole.", history)
        assert answer.grounded
        assert answer.cited_values == (CitedValue(4.6, "cm", 1),)

    def test_unsupported_number_flags_answer(self):
        answer = build_final_answer("LVID measures 9.90 cm.", [_entry({"value_cm": 4.6})])
        assert not answer.grounded
        assert answer.ungrounded_values == (9.9,)

    def test_millimetre_claims_convert(self):
        answer = build_final_answer("The cavity spans 46 mm.", [_entry({"value_cm": 4.6})])
        assert answer.grounded
        assert answer.cited_values[0].unit == "mm"

    def test_bare_integers_are_not_claims(self):
        answer = build_final_answer("Frame 15 of 60 was used.", [_entry({"value_cm": 4.6})])
        assert answer.grounded
        assert answer.cited_values == ()

    def test_tolerance_scales_with_printed_decimals(self):
        history = [_entry({"value_cm": 4.6028})]
        assert build_final_answer("Roughly 4.60 cm.", history).grounded
        assert build_final_answer("Roughly 4.6 cm.", history).grounded
        assert not build_final_answer("Roughly 4.71 cm.", history).grounded

    def test_error_results_never_ground_anything(self):
        answer = build_final_answer("Value 4.60 cm.", [_entry({"value_cm": 4.6}, ok=False)])
        assert not answer.grounded

    def test_passages_collected_in_order_without_duplicates(self):
        history = [
            _entry({"hits": [{"passage_id": "ranges:0"}, {"passage_id": "ranges:384"}]}),
            _entry({"hits": [{"passage_id": "ranges:0"}]}),
        ]
        answer = build_final_answer("Per guidelines, normal.", history)
        assert answer.cited_passages == ("ranges:0", "ranges:384")


class TestHelpers:
    def test_abort_session_only_downgrades_running(self, study):
        running = SessionState("s", "q", study.study_id)
        assert abort_session(running).status is SessionStatus.ABORTED
        done = SessionState("s", "q", study.study_id, status=SessionStatus.FINISHED)
        assert abort_session(done).status is SessionStatus.FINISHED

    def test_generate_answer_appends_instruction(self, study, registry):
        seen = {}

        def policy(messages):
            seen["last"] = messages[-1]
            return "The answer."

        text = generate_answer("q", [], registry, PolicyBackend(policy), study)
        assert text == "The answer."
        assert seen["last"] == {"role": "user", "content": ANSWER_INSTRUCTION}

    def test_repeat_runs_are_digest_identical(self, study, registry):
        def run_once():
            backend = ScriptedBackend.from_texts([CALL_PHASES, CALL_MEASURE], answer_text="4.60 cm.")
            return _run(study, registry, backend)

        a, b = run_once(), run_once()
        assert session_digest(a) == session_digest(b)
        assert json.dumps(session_digest(a), sort_keys=True) == json.dumps(session_digest(b), sort_keys=True)


class TestBudgetProperty:
    @settings(deadline=None, max_examples=25)
    @given(budget=st.integers(min_value=0, max_value=6))
    def test_exact_budget_spend_and_round_trips(self, budget):
        study = make_plax_study()
        registry = build_registry()
        counting = CountingBackend(ScriptedBackend.from_texts([CALL_FEAS] * 10, answer_text="x"))
        state = run_session("q", study, registry, counting, context=_context(study), step_budget=budget)
        assert state.status is SessionStatus.BUDGET_EXHAUSTED
        assert len(state.history) == budget
        assert counting.calls == budget + 1
