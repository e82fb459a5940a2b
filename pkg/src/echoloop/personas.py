"""Deterministic reference personas for offline sessions.

The measurement persona plays the loop the way a careful sonographer would:
detect phase frames once, screen feasibility when that tool is on the
palette, measure what the question asks for, look up guideline ranges when a
verdict is requested, then FINISH with a grounded summary. It is a pure
function of the rendered chat, so identical histories always produce
identical emissions.

Without the feasibility tool the persona falls back to a fixed probe
protocol: up to ten measurement attempts per kind, spread around the first
two frames of the requested phase, before it will state that a structure
cannot be measured. That protocol is honest but expensive, which is exactly
the behavior the tool-ablation comparison is meant to expose.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .domain import (
    CardiacPhase,
    KIND_LABELS,
    MeasurementKind,
    kinds_in_text,
)
from .errors import ConfigError
from .gateway import (
    Backend,
    BackendConfig,
    Message,
    PolicyBackend,
    RemoteBackend,
    is_answer_request,
    reasoning_step_index,
)
from .guidelines import parse_range_from_text, range_query
from .protocol import FINISH
from .tools import TOOL_DETECT_PHASES, TOOL_MEASURE, TOOL_PREDICT_FEASIBILITY, TOOL_SEARCH_GUIDELINE

PROBE_ATTEMPTS = 10


# ---------------------------------------------------------------------------
# question parsing


@dataclass(frozen=True)
class QuestionIntent:
    """What the clinician actually asked for."""

    phase: CardiacPhase
    kinds: tuple[MeasurementKind, ...]
    derived: str | None = None  # "rwt" | "la_ao"
    verdict_kind: MeasurementKind | None = None


def parse_question(question: str) -> QuestionIntent:
    lowered = question.lower()
    phase = CardiacPhase.ES if "end-systole" in lowered else CardiacPhase.ED

    derived: str | None = None
    if "relative wall thickness" in lowered or re.search(r"\brwt\b", lowered):
        derived = "rwt"
        kinds: tuple[MeasurementKind, ...] = (MeasurementKind.LVPW, MeasurementKind.LVID)
    elif "la/ao" in lowered or "aortic root ratio" in lowered:
        derived = "la_ao"
        kinds = (MeasurementKind.LA, MeasurementKind.AORTIC_ROOT)
    else:
        kinds = tuple(kinds_in_text(question))

    verdict_kind: MeasurementKind | None = None
    marker = "based on current guidelines"
    if marker in lowered:
        tail = question[lowered.index(marker) + len(marker):]
        mentioned = kinds_in_text(tail)
        if mentioned:
            verdict_kind = mentioned[0]
            if verdict_kind not in kinds:
                kinds = kinds + (verdict_kind,)
    if verdict_kind is None:
        # freeform phrasing: "is the LA dilated?", "is the septum thickened?"
        asked = re.search(r"\bis the\b([^?.]*?)\b(dilated|thickened|enlarged|increased|abnormal|normal)\b", lowered)
        if asked:
            mentioned = kinds_in_text(question[asked.start(1):asked.end(1)])
            if mentioned:
                verdict_kind = mentioned[0]
                if verdict_kind not in kinds:
                    kinds = kinds + (verdict_kind,)
    return QuestionIntent(phase=phase, kinds=kinds, derived=derived, verdict_kind=verdict_kind)


def probe_frames(f1: int, f2: int, frame_count: int) -> tuple[int, ...]:
    """Fixed probe order: both anchor frames, then rings around each."""
    raw = [f1, f2, f1 - 1, f1 + 1, f2 - 1, f2 + 1, f1 - 2, f1 + 2, f2 - 2, f2 + 2]
    out: list[int] = []
    for frame in raw:
        clamped = min(max(frame, 0), frame_count - 1)
        if clamped not in out:
            out.append(clamped)
        if len(out) == PROBE_ATTEMPTS:
            break
    return tuple(out)


# ---------------------------------------------------------------------------
# chat reconstruction


@dataclass
class _Knowledge:
    """Everything the persona has observed so far, rebuilt every turn."""

    frame_count: int = 2
    phases: tuple[tuple[int, ...], tuple[int, ...]] | None = None
    detect_failed: bool = False
    feasibility: dict[int, dict[MeasurementKind, bool]] = field(default_factory=dict)
    values: dict[tuple[MeasurementKind, int], float] = field(default_factory=dict)
    failures: set[tuple[MeasurementKind, int]] = field(default_factory=set)
    searches: dict[str, list[dict]] = field(default_factory=dict)


def _first_json(text: str) -> dict | None:
    start = text.find("{")
    if start == -1:
        return None
    try:
        obj, _ = json.JSONDecoder().raw_decode(text, start)
    except ValueError:
        return None
    return obj if isinstance(obj, dict) else None


def _recover(messages: Sequence[Message]) -> tuple[str, _Knowledge]:
    question = ""
    know = _Knowledge()

    if len(messages) > 1:
        content = messages[1]["content"]
        if "Question: " in content:
            question = content.split("Question: ", 1)[1]
        context = _first_json(content)
        if context and isinstance(context.get("frame_count"), int):
            know.frame_count = max(context["frame_count"], 2)

    pending_call: dict | None = None
    for message in messages[2:]:
        if message["role"] == "assistant":
            pending_call = _last_json(message["content"])
        elif message["role"] == "user" and pending_call is not None:
            observation = _first_json(message["content"])
            if observation is not None:
                _absorb(know, pending_call, observation)
            pending_call = None
    return question, know


def _last_json(text: str) -> dict | None:
    from .protocol import find_last_json_object

    found = find_last_json_object(text)
    return found[2] if found else None


def _absorb(know: _Knowledge, call: Mapping[str, Any], observation: Mapping[str, Any]) -> None:
    name = call.get("name")
    args = call.get("arguments") or {}
    ok = bool(observation.get("ok"))
    payload = observation.get("result") or {}

    if name == TOOL_DETECT_PHASES:
        if ok:
            know.phases = (
                tuple(int(f) for f in payload.get("ed_frames", [])),
                tuple(int(f) for f in payload.get("es_frames", [])),
            )
        else:
            know.detect_failed = True
    elif name == TOOL_PREDICT_FEASIBILITY and ok:
        bits: dict[MeasurementKind, bool] = {}
        for key, flag in (payload.get("feasible") or {}).items():
            try:
                bits[MeasurementKind(key)] = bool(flag)
            except ValueError:
                continue
        know.feasibility[int(payload.get("frame", args.get("frame", 0)))] = bits
    elif name == TOOL_MEASURE:
        try:
            kind = MeasurementKind(str(args.get("kind")))
            frame = int(args.get("frame"))
        except (ValueError, TypeError):
            return
        if ok and isinstance(payload.get("value_cm"), (int, float)):
            know.values[(kind, frame)] = float(payload["value_cm"])
        elif not ok:
            know.failures.add((kind, frame))
    elif name == TOOL_SEARCH_GUIDELINE and ok:
        query = str(args.get("query", ""))
        hits = payload.get("hits")
        know.searches[query] = hits if isinstance(hits, list) else []


# ---------------------------------------------------------------------------
# per-kind resolution


@dataclass(frozen=True)
class _KindStatus:
    value: float | None = None
    not_measurable: bool = False
    pending: tuple[str, dict] | None = None  # (tool name, arguments)

    @property
    def undetermined(self) -> bool:
        return self.value is None and not self.not_measurable


def _resolve_with_feasibility(kind: MeasurementKind, f1: int, f2: int, know: _Knowledge) -> _KindStatus:
    preferred = [f for f in dict.fromkeys((f1, f2)) if know.feasibility.get(f, {}).get(kind)]
    if preferred:
        for frame in preferred:
            if (kind, frame) in know.values:
                return _KindStatus(value=know.values[(kind, frame)])
        for frame in preferred:
            if (kind, frame) not in know.failures:
                return _KindStatus(pending=(TOOL_MEASURE, {"kind": kind.value, "frame": frame}))
        return _KindStatus(not_measurable=True)
    # both screens came back negative: confirm with one direct attempt so a
    # flipped prediction can never talk us out of a measurable structure
    if (kind, f1) in know.values:
        return _KindStatus(value=know.values[(kind, f1)])
    if (kind, f1) in know.failures:
        return _KindStatus(not_measurable=True)
    return _KindStatus(pending=(TOOL_MEASURE, {"kind": kind.value, "frame": f1}))


def _resolve_by_probing(kind: MeasurementKind, f1: int, f2: int, know: _Knowledge) -> _KindStatus:
    candidates = probe_frames(f1, f2, know.frame_count)
    for frame in candidates:
        if (kind, frame) in know.values:
            return _KindStatus(value=know.values[(kind, frame)])
    for frame in candidates:
        if (kind, frame) not in know.failures:
            return _KindStatus(pending=(TOOL_MEASURE, {"kind": kind.value, "frame": frame}))
    return _KindStatus(not_measurable=True)


# ---------------------------------------------------------------------------
# the measurement persona


class MeasurementPolicy:
    """Reference policy: evidence first, claims only from observations."""

    def __call__(self, messages: Sequence[Message]) -> str:
        system = messages[0]["content"] if messages else ""
        has_feasibility = f'"{TOOL_PREDICT_FEASIBILITY}"' in system
        has_retrieval = f'"{TOOL_SEARCH_GUIDELINE}"' in system

        if is_answer_request(messages):
            question, know = _recover(messages[:-1])
            return self._answer(parse_question(question), know, has_feasibility, has_retrieval)

        question, know = _recover(messages)
        intent = parse_question(question)
        action = self._next_action(intent, know, has_feasibility, has_retrieval)
        if action is None:
            return f'All requested evidence is in hand.\n{_call(FINISH, {})}'
        thought, name, arguments = action
        return f"{thought}\n{_call(name, arguments)}"

    # -- action selection ---------------------------------------------------

    def _next_action(
        self,
        intent: QuestionIntent,
        know: _Knowledge,
        has_feasibility: bool,
        has_retrieval: bool,
    ) -> tuple[str, str, dict] | None:
        if know.phases is None and not know.detect_failed:
            return (
                "I need the end-diastolic and end-systolic frame indices before placing any calipers.",
                TOOL_DETECT_PHASES,
                {},
            )
        f1, f2 = _anchor_frames(intent.phase, know)

        if has_feasibility and intent.kinds:
            for frame in dict.fromkeys((f1, f2)):
                if frame not in know.feasibility:
                    return (
                        f"Screening frame {frame} to see which structures are readable there.",
                        TOOL_PREDICT_FEASIBILITY,
                        {"frame": frame},
                    )

        for kind in intent.kinds:
            status = self._status(kind, f1, f2, know, has_feasibility)
            if status.pending is not None:
                name, arguments = status.pending
                label = KIND_LABELS[kind]
                if has_feasibility and not any(
                    know.feasibility.get(f, {}).get(kind) for f in (f1, f2)
                ):
                    thought = (
                        f"The feasibility screen doubts the {label}; confirming with a direct "
                        f"measurement on frame {arguments['frame']} before giving up on it."
                    )
                elif (kind, f1) in know.failures or any(
                    (kind, frame) in know.failures for frame in probe_frames(f1, f2, know.frame_count)
                ):
                    thought = (
                        f"The {label} did not read out on the previous frame; "
                        f"trying frame {arguments['frame']} instead."
                    )
                else:
                    thought = f"Measuring the {label} on frame {arguments['frame']}."
                return thought, name, arguments

        if intent.verdict_kind is not None and has_retrieval:
            subject = self._status(intent.verdict_kind, f1, f2, know, has_feasibility)
            query = range_query(intent.verdict_kind)
            if subject.value is not None and query not in know.searches:
                return (
                    f"Looking up the guideline reference range for the {KIND_LABELS[intent.verdict_kind]}.",
                    TOOL_SEARCH_GUIDELINE,
                    {"query": query},
                )
        return None

    def _status(
        self, kind: MeasurementKind, f1: int, f2: int, know: _Knowledge, has_feasibility: bool
    ) -> _KindStatus:
        if has_feasibility:
            return _resolve_with_feasibility(kind, f1, f2, know)
        return _resolve_by_probing(kind, f1, f2, know)

    # -- final answer ---------------------------------------------------------

    def _answer(
        self, intent: QuestionIntent, know: _Knowledge, has_feasibility: bool, has_retrieval: bool
    ) -> str:
        f1, f2 = _anchor_frames(intent.phase, know)
        status = {
            kind: self._status(kind, f1, f2, know, has_feasibility) for kind in intent.kinds
        }

        if intent.derived is not None:
            return _derived_answer(intent, status)

        parts: list[str] = []
        for kind in intent.kinds:
            st = status[kind]
            if st.value is not None:
                parts.append(f"{kind.value} at {intent.phase.value}: {st.value:.2f} cm")
            elif st.not_measurable:
                parts.append(f"{kind.value} is not reliably measurable in this study")
            else:
                parts.append(f"{kind.value} could not be determined within the available step budget")
        text = "; ".join(parts) + "." if parts else "No measurable structures were requested."

        if intent.verdict_kind is not None:
            text += " " + self._verdict_sentence(intent.verdict_kind, status.get(intent.verdict_kind), know, has_retrieval)
        return text

    def _verdict_sentence(
        self,
        kind: MeasurementKind,
        st: _KindStatus | None,
        know: _Knowledge,
        has_retrieval: bool,
    ) -> str:
        label = KIND_LABELS[kind]
        if st is None or st.value is None:
            return f"Without a measured value, no guideline verdict can be given for the {label}."
        retrieved = _retrieved_range(kind, know) if has_retrieval else None
        if retrieved is None:
            return f"No guideline range was retrieved, so the {label} ({kind.value}) is presumed normal."
        lower, upper, term = retrieved
        if st.value > upper:
            return (
                f"Per the retrieved guideline range ({lower:.1f} to {upper:.1f} cm), "
                f"the {label} ({kind.value}) is {term}."
            )
        return (
            f"Per the retrieved guideline range ({lower:.1f} to {upper:.1f} cm), "
            f"the {label} ({kind.value}) is normal."
        )


def _call(name: str, arguments: dict) -> str:
    return json.dumps({"name": name, "arguments": arguments}, sort_keys=True)


def _anchor_frames(phase: CardiacPhase, know: _Knowledge) -> tuple[int, int]:
    """First two frames of the requested phase, with safe fallbacks."""
    frames: tuple[int, ...] = ()
    if know.phases is not None:
        frames = know.phases[0] if phase is CardiacPhase.ED else know.phases[1]
    if not frames:
        return 0, min(1, know.frame_count - 1)
    f1 = frames[0]
    f2 = frames[1] if len(frames) > 1 else min(f1 + 1, know.frame_count - 1)
    return f1, f2


def _retrieved_range(kind: MeasurementKind, know: _Knowledge) -> tuple[float, float, str] | None:
    """(lower, upper, abnormal term) read out of the retrieved passages."""
    marker = f"for {kind.value.lower()} the normal adult range"
    for hits in know.searches.values():
        for hit in hits:
            text = str(hit.get("text", ""))
            pos = text.lower().find(marker)
            if pos == -1:
                continue
            # a passage can hold several kinds' sentences; read past the marker only
            scoped = text[pos:]
            parsed = parse_range_from_text(scoped)
            if parsed is None:
                continue
            term_match = re.search(r"indicate a (\w+)", scoped.lower())
            term = term_match.group(1) if term_match else "increased"
            return parsed[0], parsed[1], term
    return None


def _derived_answer(intent: QuestionIntent, status: Mapping[MeasurementKind, _KindStatus]) -> str:
    first, second = intent.kinds[0], intent.kinds[1]
    a, b = status[first], status[second]
    if a.value is None or b.value is None:
        missing = [KIND_LABELS[k] for k, st in ((first, a), (second, b)) if st.value is None]
        return "The index cannot be computed because " + " and ".join(missing) + " could not be measured."
    if intent.derived == "rwt":
        rwt = 2.0 * a.value / b.value
        return f"RWT = 2 x {a.value:.2f} / {b.value:.2f} = {rwt:.2f}."
    ratio = a.value / b.value
    return f"LA/Ao = {a.value:.2f} / {b.value:.2f} = {ratio:.2f}."


# ---------------------------------------------------------------------------
# adversarial persona


_ADVERSARIAL_EMISSIONS: tuple[Any, ...] = (
    lambda step: "Let me just keep thinking about this study without doing anything concrete.",
    lambda step: 'Trying a tool nobody registered.\n{"name": "summon_dragon", "arguments": {}}',
    lambda step: 'Forgetting every argument.\n{"name": "measure", "arguments": {}}',
    lambda step: 'Inventing an anatomy.\n{"name": "measure", "arguments": {"kind": "Femur", "frame": 0}}',
    lambda step: 'Passing text where a number goes.\n{"name": "measure", "arguments": {"kind": "IVS", "frame": "zero"}}',
    lambda step: 'Duplicate keys ahead {"name": "detect_phases", "arguments": {}, "name": "detect_phases"} done.',
    lambda step: 'Smuggling an extra argument.\n{"name": "detect_phases", "arguments": {"verbose": true}}',
    lambda step: 'A legitimate call, for variety.\n{"name": "detect_phases", "arguments": {}}',
    lambda step: f'Aiming outside the clip.\n{{"name": "predict_feasibility", "arguments": {{"frame": -{step + 1}}}}}',
    lambda step: "Closing brace soup } { \"name\": incomplete",
)


class AdversarialPolicy:
    """Never finishes; cycles through protocol-violating emissions.

    Used to verify that the loop absorbs arbitrary misbehavior into error
    observations and still terminates at the step budget.
    """

    def __init__(self, salt: int = 0) -> None:
        self.salt = salt

    def __call__(self, messages: Sequence[Message]) -> str:
        if is_answer_request(messages):
            return "No conclusion was reached before the step budget ran out."
        step = reasoning_step_index(messages)
        pattern = _ADVERSARIAL_EMISSIONS[(step + self.salt) % len(_ADVERSARIAL_EMISSIONS)]
        return pattern(step)


# ---------------------------------------------------------------------------
# factory


def build_backend(config: BackendConfig, api_key: str | None = None, transport: Any = None) -> Backend:
    """Instantiate the backend a config names."""
    if config.kind == "remote":
        return RemoteBackend(config, api_key=api_key, transport=transport)
    if config.kind != "scripted":
        raise ConfigError(f"unknown backend kind {config.kind!r}")
    if config.model in ("optimal", "measurement"):
        return PolicyBackend(MeasurementPolicy())
    if config.model == "adversarial":
        return PolicyBackend(AdversarialPolicy())
    raise ConfigError(f"unknown scripted persona {config.model!r}")
