"""Benchmark harness: rule judging, failure attribution, tool metrics.

A case passes only when every gold claim is satisfied by the agent's final
answer. Numeric claims need the kind and a close-enough number in the same
clause; category claims need the kind plus a category keyword that is not
negated. Failed cases are attributed to the first failing stage of the
chain: tool calling, then tool measurement, then final conclusion.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .domain import (
    ALL_KINDS,
    CardiacPhase,
    EchoStudy,
    MeasurementKind,
    feasibility_vector,
    find_kind_mentions,
    kind_feasible,
    phase_frames,
    value_at,
)
from .errors import ConfigError, JudgeError, MetricsError
from .gateway import Backend, PolicyBackend
from .guidelines import GuidelineIndex, build_reference_index
from .loop import SessionState, run_session
from .personas import MeasurementPolicy
from .prompts import prompt_hash
from .sim import BenchmarkCase, GoldAnswer, GoldClaim
from .tools import TOOL_MEASURE, ToolContext, build_registry
from .vision import NoiseProfile, detect_phases, measure, predict_feasibility

FAILURE_TOOL_CALLING = "ToolCalling"
FAILURE_TOOL_MEASUREMENT = "ToolMeasurement"
FAILURE_FINAL_CONCLUSION = "FinalConclusion"

PROTOCOL_ERROR_KINDS = frozenset({"Malformed", "UnknownTool", "InvalidArguments"})

CATEGORY_KEYWORDS: dict[str, tuple[str, ...]] = {
    "not_measurable": (
        "not reliably measurable",
        "cannot be reliably measured",
        "cannot be measured",
        "not measurable",
    ),
    "increased": ("thickened", "dilated", "enlarged", "increased"),
    "normal": ("within the normal range", "normal"),
}

_CLAUSE_SPLIT = re.compile(r"(?<=[.!?])\s+|;\s*")
_NUMBER_UNIT = re.compile(r"(-?\d+(?:\.\d+)?)\s*(cm|mm)?\b")
_NEGATOR = re.compile(r"\b(?:not|no|never|without)\s+(?:\w+\s+){0,2}$")


# ---------------------------------------------------------------------------
# rule judge


def split_clauses(text: str) -> list[str]:
    return [clause.strip() for clause in _CLAUSE_SPLIT.split(text) if clause.strip()]


def _clause_numbers_cm(clause: str) -> list[float]:
    out: list[float] = []
    for match in _NUMBER_UNIT.finditer(clause):
        value = float(match.group(1))
        out.append(value / 10.0 if match.group(2) == "mm" else value)
    return out


def _kind_in_clause(clause: str, kind: str | None) -> bool:
    if kind is None:
        return True
    try:
        wanted = MeasurementKind(kind)
    except ValueError:
        return kind.lower() in clause.lower()  # derived index names like RWT
    return any(found == wanted for _, found in find_kind_mentions(clause))


def _category_in_clause(clause: str, category: str) -> bool:
    lowered = clause.lower()
    for keyword in CATEGORY_KEYWORDS[category]:
        for match in re.finditer(re.escape(keyword), lowered):
            if category != "not_measurable" and _NEGATOR.search(lowered[: match.start()]):
                continue
            return True
    return False


@dataclass(frozen=True)
class ClaimVerdict:
    claim: GoldClaim
    passed: bool
    detail: str


@dataclass(frozen=True)
class JudgeResult:
    passed: bool
    claims: tuple[ClaimVerdict, ...]


def judge_claim(answer_text: str, claim: GoldClaim) -> ClaimVerdict:
    clauses = split_clauses(answer_text)
    if claim.type == "numeric":
        assert claim.value is not None and claim.tolerance is not None
        for clause in clauses:
            if not _kind_in_clause(clause, claim.kind):
                continue
            for number in _clause_numbers_cm(clause):
                if abs(number - claim.value) <= claim.tolerance:
                    return ClaimVerdict(claim, True, f"matched {number} within {claim.tolerance}")
        return ClaimVerdict(claim, False, f"no clause gives {claim.kind} near {claim.value}")
    if claim.type == "category":
        assert claim.category is not None
        for clause in clauses:
            if _kind_in_clause(clause, claim.kind) and _category_in_clause(clause, claim.category):
                return ClaimVerdict(claim, True, f"clause asserts {claim.category}")
        return ClaimVerdict(claim, False, f"no clause asserts {claim.kind} is {claim.category}")
    raise ConfigError(f"unknown claim type {claim.type!r}")


def judge_answer(answer_text: str, gold: GoldAnswer) -> JudgeResult:
    verdicts = tuple(judge_claim(answer_text, claim) for claim in gold.claims)
    return JudgeResult(passed=all(v.passed for v in verdicts), claims=verdicts)


# ---------------------------------------------------------------------------
# optional model judge


MODEL_JUDGE_SYSTEM = (
    "You are a strict grader of echocardiography answers. Compare the candidate answer with the "
    "reference. Reply with exactly PASS if every claim in the reference is supported, otherwise FAIL."
)


def judge_with_backend(backend: Backend, question: str, gold: GoldAnswer, answer_text: str) -> bool:
    messages = [
        {"role": "system", "content": MODEL_JUDGE_SYSTEM},
        {
            "role": "user",
            "content": (
                f"Question: {question}\n\nReference answer: {gold.text}\n\n"
                f"Candidate answer: {answer_text}\n\nReply PASS or FAIL."
            ),
        },
    ]
    reply = backend.complete(messages)
    verdict = reply.strip().upper()
    if verdict.startswith("PASS"):
        return True
    if verdict.startswith("FAIL"):
        return False
    raise JudgeError(f"judge backend replied with neither PASS nor FAIL: {reply[:80]!r}")


# ---------------------------------------------------------------------------
# failure attribution


def classify_failure(state: SessionState, gold: GoldAnswer) -> str:
    """First failing stage: tool calling, tool measurement, final conclusion."""
    for entry in state.history:
        if not entry.result.ok and entry.result.error_kind in PROTOCOL_ERROR_KINDS:
            return FAILURE_TOOL_CALLING
    numeric = {c.kind: c for c in gold.claims if c.type == "numeric" and c.value is not None}
    for entry in state.history:
        if entry.action is None or entry.action.name != TOOL_MEASURE or not entry.result.ok:
            continue
        claim = numeric.get(str(entry.result.payload.get("kind")))
        value = entry.result.payload.get("value_cm")
        if claim is None or not isinstance(value, (int, float)):
            continue
        if abs(float(value) - claim.value) > (claim.tolerance or 0.0):
            return FAILURE_TOOL_MEASUREMENT
    return FAILURE_FINAL_CONCLUSION


# ---------------------------------------------------------------------------
# classification metrics


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    support: int = 0


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1, support=tp + fn)


def micro_macro(counts: Mapping[str, tuple[int, int, int]]) -> tuple[PRF, PRF]:
    """Micro pools counts; macro averages labels that have support."""
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    micro = prf_from_counts(tp, fp, fn)

    with_support = [prf_from_counts(*c) for c in counts.values() if c[0] + c[2] > 0]
    if not with_support:
        return micro, PRF(0.0, 0.0, 0.0, 0)
    macro = PRF(
        precision=sum(m.precision for m in with_support) / len(with_support),
        recall=sum(m.recall for m in with_support) / len(with_support),
        f1=sum(m.f1 for m in with_support) / len(with_support),
        support=sum(m.support for m in with_support),
    )
    return micro, macro


def closest_frame_mae(true_frames: Sequence[int], predicted_frames: Sequence[int]) -> float:
    """Mean over true frames of the distance to the closest prediction."""
    if not true_frames:
        raise MetricsError("no true frames to score against")
    if not predicted_frames:
        raise MetricsError("no predicted frames to score")
    return sum(min(abs(t - p) for p in predicted_frames) for t in true_frames) / len(true_frames)


# ---------------------------------------------------------------------------
# tool-level evaluation


def feasibility_metrics(studies: Sequence[EchoStudy], noise: NoiseProfile) -> dict[str, Any]:
    """Per-kind and pooled precision/recall/F1 over the key-frame split."""
    from .vision import key_frames

    counts: dict[str, list[int]] = {kind.value: [0, 0, 0] for kind in ALL_KINDS}
    split = key_frames(studies)
    for study, frame in split:
        truth = feasibility_vector(study, frame)
        predicted = predict_feasibility(study, frame, noise).feasible
        for kind in ALL_KINDS:
            t, p = truth[kind], predicted[kind]
            if t and p:
                counts[kind.value][0] += 1
            elif p and not t:
                counts[kind.value][1] += 1
            elif t and not p:
                counts[kind.value][2] += 1
    fixed = {name: (c[0], c[1], c[2]) for name, c in counts.items()}
    micro, macro = micro_macro(fixed)
    return {
        "frames": len(split),
        "micro": micro,
        "macro": macro,
        "per_kind": {name: prf_from_counts(*c) for name, c in fixed.items()},
    }


def measurement_mae(
    studies: Sequence[EchoStudy],
    noise: NoiseProfile,
    kinds: Sequence[MeasurementKind] | None = None,
    frames: str = "all",
) -> dict[MeasurementKind, tuple[float, int]]:
    """Observed MAE of the measurement tool against the true curve."""
    if frames not in ("all", "phase"):
        raise ConfigError(f"frames must be 'all' or 'phase', got {frames!r}")
    wanted = tuple(kinds) if kinds is not None else tuple(MeasurementKind)
    sums: dict[MeasurementKind, float] = {k: 0.0 for k in wanted}
    ns: dict[MeasurementKind, int] = {k: 0 for k in wanted}
    for study in studies:
        if frames == "phase":
            frame_list = sorted(
                set(phase_frames(study, CardiacPhase.ED)) | set(phase_frames(study, CardiacPhase.ES))
            )
        else:
            frame_list = list(range(study.frame_count))
        for kind in wanted:
            if kind not in study.cycle.values:
                continue
            for frame in frame_list:
                if not kind_feasible(study, kind, frame):
                    continue
                observed = measure(study, frame, kind, noise).value_cm
                sums[kind] += abs(observed - value_at(study, kind, frame))
                ns[kind] += 1
    return {k: (sums[k] / ns[k] if ns[k] else 0.0, ns[k]) for k in wanted}


def phase_frame_mae(studies: Sequence[EchoStudy], noise: NoiseProfile) -> dict[str, tuple[float, int]]:
    """Closest-predicted-frame MAE for the phase detector, per phase."""
    totals = {"ED": [0.0, 0], "ES": [0.0, 0]}
    for study in studies:
        result = detect_phases(study, noise)
        for name, true, predicted in (
            ("ED", phase_frames(study, CardiacPhase.ED), result.ed_frames),
            ("ES", phase_frames(study, CardiacPhase.ES), result.es_frames),
        ):
            for t in true:
                totals[name][0] += min(abs(t - p) for p in predicted)
                totals[name][1] += 1
    return {name: (s / n if n else 0.0, n) for name, (s, n) in totals.items()}


# ---------------------------------------------------------------------------
# benchmark runs


@dataclass(frozen=True)
class CaseOutcome:
    case_id: str
    difficulty: str
    passed: bool
    failure_class: str | None
    answer: str
    steps: int
    status: str
    grounded: bool
    claims: tuple[ClaimVerdict, ...]


@dataclass(frozen=True)
class RunReport:
    label: str
    fingerprint: str
    flags: dict[str, Any]
    noise: dict[str, Any]
    outcomes: tuple[CaseOutcome, ...]

    @property
    def accuracy_defined(self) -> bool:
        return bool(self.outcomes)

    @property
    def accuracy(self) -> float:
        return sum(o.passed for o in self.outcomes) / len(self.outcomes) if self.outcomes else 0.0

    def per_difficulty(self) -> dict[str, tuple[int, int]]:
        table: dict[str, list[int]] = {}
        for outcome in self.outcomes:
            row = table.setdefault(outcome.difficulty, [0, 0])
            row[0] += int(outcome.passed)
            row[1] += 1
        return {name: (row[0], row[1]) for name, row in sorted(table.items())}

    def failure_counts(self) -> dict[str, int]:
        table: dict[str, int] = {}
        for outcome in self.outcomes:
            if outcome.failure_class:
                table[outcome.failure_class] = table.get(outcome.failure_class, 0) + 1
        return dict(sorted(table.items()))


def config_fingerprint(noise: NoiseProfile, flags: Mapping[str, Any], case_ids: Sequence[str]) -> str:
    """Hash of everything that determines a run; excludes wall-clock state."""
    material = {
        "prompt": prompt_hash(),
        "noise": noise.to_doc(),
        "flags": dict(sorted(flags.items())),
        "cases": list(case_ids),
    }
    return hashlib.sha256(json.dumps(material, sort_keys=True).encode("utf-8")).hexdigest()


def run_benchmark(
    cases: Sequence[BenchmarkCase],
    studies: Sequence[EchoStudy],
    noise: NoiseProfile,
    include_feasibility: bool = True,
    include_retrieval: bool = True,
    guideline_index: GuidelineIndex | None = None,
    step_budget: int = 15,
    backend: Backend | None = None,
    judge_backend: Backend | None = None,
    label: str = "full",
) -> RunReport:
    """Run every case through the loop and judge the final answers."""
    by_id = {study.study_id: study for study in studies}
    registry = build_registry(include_feasibility=include_feasibility, include_retrieval=include_retrieval)
    if include_retrieval and guideline_index is None:
        guideline_index = build_reference_index()
    if backend is None:
        backend = PolicyBackend(MeasurementPolicy())

    flags = {
        "include_feasibility": include_feasibility,
        "include_retrieval": include_retrieval,
        "step_budget": step_budget,
        "judge": "model" if judge_backend is not None else "rule",
    }

    outcomes: list[CaseOutcome] = []
    for case in cases:
        study = by_id.get(case.study_id)
        if study is None:
            # a broken case becomes an error entry; the rest of the run proceeds
            outcomes.append(
                CaseOutcome(
                    case_id=case.case_id,
                    difficulty=case.difficulty,
                    passed=False,
                    failure_class=None,
                    answer="",
                    steps=0,
                    status="error",
                    grounded=False,
                    claims=(),
                )
            )
            continue
        context = ToolContext(
            study=study,
            noise=noise,
            guideline_index=guideline_index if include_retrieval else None,
        )
        state = run_session(
            question=case.question,
            study=study,
            registry=registry,
            backend=backend,
            context=context,
            step_budget=step_budget,
            session_id=case.case_id,
        )
        answer_text = state.answer.text if state.answer else ""
        result = judge_answer(answer_text, case.gold)
        passed = result.passed
        if judge_backend is not None:
            passed = judge_with_backend(judge_backend, case.question, case.gold, answer_text)
        outcomes.append(
            CaseOutcome(
                case_id=case.case_id,
                difficulty=case.difficulty,
                passed=passed,
                failure_class=None if passed else classify_failure(state, case.gold),
                answer=answer_text,
                steps=len(state.history),
                status=state.status.value,
                grounded=bool(state.answer.grounded) if state.answer else False,
                claims=result.claims,
            )
        )
    return RunReport(
        label=label,
        fingerprint=config_fingerprint(noise, flags, [c.case_id for c in cases]),
        flags=flags,
        noise=noise.to_doc(),
        outcomes=tuple(outcomes),
    )


ABLATION_ROWS: tuple[tuple[str, bool, bool], ...] = (
    ("full", True, True),
    ("no_feasibility", False, True),
    ("no_retrieval", True, False),
    ("neither", False, False),
)


def ablation_run(
    cases: Sequence[BenchmarkCase],
    studies: Sequence[EchoStudy],
    noise: NoiseProfile,
    step_budget: int = 15,
) -> dict[str, RunReport]:
    """Four tool palettes over identical cases and identical noise draws."""
    index = build_reference_index()
    reports: dict[str, RunReport] = {}
    for label, with_feasibility, with_retrieval in ABLATION_ROWS:
        reports[label] = run_benchmark(
            cases,
            studies,
            noise=noise,
            include_feasibility=with_feasibility,
            include_retrieval=with_retrieval,
            guideline_index=index if with_retrieval else None,
            step_budget=step_budget,
            label=label,
        )
    return reports


# ---------------------------------------------------------------------------
# report serialization (stable; no wall-clock fields anywhere)


def canonical_report(report: RunReport) -> dict[str, Any]:
    return {
        "label": report.label,
        "fingerprint": report.fingerprint,
        "flags": dict(sorted(report.flags.items())),
        "noise": report.noise,
        "accuracy": round(report.accuracy, 6) if report.accuracy_defined else None,
        "per_difficulty": {k: list(v) for k, v in report.per_difficulty().items()},
        "failure_counts": report.failure_counts(),
        "outcomes": [
            {
                "case_id": o.case_id,
                "difficulty": o.difficulty,
                "passed": o.passed,
                "failure_class": o.failure_class,
                "answer": o.answer,
                "steps": o.steps,
                "status": o.status,
                "grounded": o.grounded,
                "claims": [
                    {"type": v.claim.type, "kind": v.claim.kind, "passed": v.passed, "detail": v.detail}
                    for v in o.claims
                ],
            }
            for o in report.outcomes
        ],
    }


def report_to_json(report: RunReport) -> str:
    return json.dumps(canonical_report(report), sort_keys=True, indent=2) + "\n"


def format_report(report: RunReport) -> str:
    lines = [
        f"run: {report.label}   cases: {len(report.outcomes)}   accuracy: {report.accuracy:.3f}",
        f"fingerprint: {report.fingerprint[:16]}",
        "",
        f"{'difficulty':<12} {'passed':>6} {'total':>6}",
    ]
    for name, (passed, total) in report.per_difficulty().items():
        lines.append(f"{name:<12} {passed:>6} {total:>6}")
    failures = report.failure_counts()
    if failures:
        lines.append("")
        lines.append(f"{'failure class':<18} {'count':>5}")
        for name, count in failures.items():
            lines.append(f"{name:<18} {count:>5}")
    return "\n".join(lines)


def format_ablation(reports: Mapping[str, RunReport]) -> str:
    lines = [f"{'configuration':<16} {'accuracy':>8} {'passed':>7} {'total':>6}"]
    for label, report in reports.items():
        passed = sum(o.passed for o in report.outcomes)
        lines.append(f"{label:<16} {report.accuracy:>8.3f} {passed:>7} {len(report.outcomes):>6}")
    return "\n".join(lines)
