"""Synthetic echo study simulator and benchmark generator.

Studies follow a cosine cardiac cycle: value(t) = es + (ed-es)*(1+cos(2*pi*
(t-offset)/period))/2, so cavities peak on declared ED frames and walls
(stored with ed < es) peak on ES frames. Everything is a pure function of
(config, seed); datasets serialize without wall-clock fields so repeated
generation is byte-identical.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import (
    ALL_KINDS,
    CAVITY_KINDS,
    EVALUATED_KINDS,
    KIND_LABELS,
    SCHEMA_STUDY,
    VIEW_KINDS,
    WALL_KINDS,
    CardiacPhase,
    CycleParams,
    DegradedWindow,
    EchoStudy,
    EchoView,
    MeasurementKind,
    PixelRef,
    StudyQuality,
    kind_feasible,
    phase_frames,
    phase_value,
    study_from_dict,
    study_to_dict,
    validate_study,
)
from .errors import ConfigError, NotFeasible
from .guidelines import LA_AO_CUTOFF, REFERENCE_RANGES, RWT_CUTOFF
from .rng import substream

log = logging.getLogger(__name__)

SCHEMA_DATASET = "echodataset/1"
SCHEMA_BENCH = "echobench/1"

DIFF_EASY = "easy"
DIFF_MEDIUM = "medium"
DIFF_DIFFICULT = "difficult"

# end-diastolic draw ranges (cm); walls grow toward ES, cavities shrink
VALUE_RANGES: dict[MeasurementKind, tuple[float, float]] = {
    MeasurementKind.IVS: (0.6, 1.6),
    MeasurementKind.LVPW: (0.6, 1.6),
    MeasurementKind.LVID: (3.8, 6.4),
    MeasurementKind.LA: (2.4, 5.2),
    MeasurementKind.AORTA: (2.2, 4.4),
    MeasurementKind.AORTIC_ROOT: (2.2, 4.6),
    MeasurementKind.RV_BASE: (2.6, 4.8),
    MeasurementKind.LVOT: (1.8, 2.6),
    MeasurementKind.RVOT: (2.0, 3.5),
    MeasurementKind.TAPSE: (1.4, 2.8),
    MeasurementKind.IVC: (1.2, 2.4),
    MeasurementKind.PA: (1.8, 3.0),
    MeasurementKind.LA_LENGTH: (3.5, 6.0),
    MeasurementKind.RA: (3.0, 5.0),
    MeasurementKind.ASC_AORTA: (2.4, 4.0),
    MeasurementKind.STJ: (2.0, 3.4),
}

DEFAULT_VIEW_MIX: dict[EchoView, float] = {
    EchoView.PLAX: 0.22,
    EchoView.A4C: 0.18,
    EchoView.PSAX_MV: 0.08,
    EchoView.PSAX_PM: 0.06,
    EchoView.PSAX_AV: 0.08,
    EchoView.A2C: 0.06,
    EchoView.A3C: 0.08,
    EchoView.A5C: 0.04,
    EchoView.SUBCOSTAL_4C: 0.06,
    EchoView.SUBCOSTAL_IVC: 0.03,
    EchoView.SUPRASTERNAL: 0.03,
    EchoView.RV_INFLOW: 0.04,
    EchoView.PLAX_ZOOM: 0.04,
}


@dataclass(frozen=True)
class SimConfig:
    seed: int = 7
    study_count: int = 80
    frame_count_range: tuple[int, int] = (96, 160)
    period_range: tuple[int, int] = (24, 48)  # rounded to even
    frame_rate_range: tuple[float, float] = (40.0, 62.0)
    pixel_scale_range: tuple[float, float] = (0.030, 0.060)
    view_mix: Mapping[EchoView, float] = field(default_factory=lambda: dict(DEFAULT_VIEW_MIX))
    visibility_drop: float = 0.18
    degraded_prob: float = 0.25
    degraded_len_range: tuple[int, int] = (4, 10)
    with_pixels: bool = False
    pixel_size: tuple[int, int] = (112, 112)  # (height, width)


def validate_config(config: SimConfig) -> None:
    if config.study_count < 1:
        raise ConfigError(f"study_count must be >= 1, got {config.study_count}")
    for name in ("frame_count_range", "period_range", "frame_rate_range", "pixel_scale_range", "degraded_len_range"):
        lo, hi = getattr(config, name)
        if not lo <= hi:
            raise ConfigError(f"{name} must be (lo, hi) with lo <= hi, got ({lo}, {hi})")
    if config.period_range[0] < 4:
        raise ConfigError(f"cycle period must be >= 4 frames, got range {config.period_range}")
    if config.frame_count_range[0] < 2 * config.period_range[1]:
        raise ConfigError("frame_count_range must cover at least two of the longest cycles")
    for name in ("visibility_drop", "degraded_prob"):
        value = getattr(config, name)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    weights = list(config.view_mix.values())
    if not weights or min(weights) < 0 or sum(weights) <= 0:
        raise ConfigError("view_mix weights must be non-negative and sum to > 0")


# ---------------------------------------------------------------------------
# study generation


def _draw_values(rng: np.random.Generator, kinds: Sequence[MeasurementKind]) -> dict[MeasurementKind, tuple[float, float]]:
    values: dict[MeasurementKind, tuple[float, float]] = {}
    for kind in ALL_KINDS:  # fixed order keeps draws stable
        if kind not in kinds:
            continue
        lo, hi = VALUE_RANGES[kind]
        ed = float(rng.uniform(lo, hi))
        if kind in WALL_KINDS:
            es = ed * float(rng.uniform(1.15, 1.45))
        elif kind in CAVITY_KINDS:
            es = ed * float(rng.uniform(0.55, 0.80))
        else:
            es = ed * float(rng.uniform(0.85, 0.98))
        # 0.01 cm grid: report-precision values keep zero-noise runs exact
        values[kind] = (round(ed, 2), round(es, 2))
    return values


def generate_study(config: SimConfig, index: int) -> EchoStudy:
    """Deterministic in (config.seed, index)."""
    rng = substream(config.seed, "study", index)

    views = sorted(config.view_mix, key=lambda v: v.value)
    weights = np.array([config.view_mix[v] for v in views], dtype=float)
    view = views[int(rng.choice(len(views), p=weights / weights.sum()))]

    frame_count = int(rng.integers(config.frame_count_range[0], config.frame_count_range[1] + 1))
    p_lo, p_hi = config.period_range
    period = 2 * int(rng.integers(math.ceil(p_lo / 2), p_hi // 2 + 1))
    offset = int(rng.integers(0, period))
    frame_rate = round(float(rng.uniform(*config.frame_rate_range)), 1)
    pixel_scale = round(float(rng.uniform(*config.pixel_scale_range)), 4)

    kinds = VIEW_KINDS[view]
    values = _draw_values(rng, tuple(kinds))
    visible = {kind: bool(rng.random() >= config.visibility_drop) for kind in ALL_KINDS if kind in kinds}

    degraded: tuple[DegradedWindow, ...] = ()
    if rng.random() < config.degraded_prob:
        length = int(rng.integers(config.degraded_len_range[0], config.degraded_len_range[1] + 1))
        start = int(rng.integers(0, max(frame_count - length, 1)))
        candidates = [k for k in ALL_KINDS if k in kinds and visible.get(k, False)]
        if candidates:
            count = int(rng.integers(1, min(2, len(candidates)) + 1))
            picked = [candidates[int(i)] for i in rng.choice(len(candidates), size=count, replace=False)]
            degraded = (DegradedWindow(start, start + length, frozenset(picked)),)

    study = EchoStudy(
        study_id=f"study_{index:04d}",
        view=view,
        frame_count=frame_count,
        frame_rate=frame_rate,
        pixel_scale_cm=pixel_scale,
        cycle=CycleParams(period, offset, values),
        quality=StudyQuality(visible, degraded),
        pixels=None,
    )
    report = validate_study(study)
    if not report.ok:  # pragma: no cover - generator bug guard
        raise ConfigError(f"generator produced invalid study {study.study_id}: {report.violations}")
    return study


def generate_studies(config: SimConfig) -> list[EchoStudy]:
    validate_config(config)
    return [generate_study(config, index) for index in range(config.study_count)]


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class GroundTruth:
    study_id: str
    ed_frames: tuple[int, ...]
    es_frames: tuple[int, ...]
    phase_values: Mapping[MeasurementKind, tuple[float, float]]


def ground_truth(study: EchoStudy) -> GroundTruth:
    return GroundTruth(
        study_id=study.study_id,
        ed_frames=phase_frames(study, CardiacPhase.ED),
        es_frames=phase_frames(study, CardiacPhase.ES),
        phase_values=dict(study.cycle.values),
    )


def ground_truth_measurement(study: EchoStudy, kind: MeasurementKind, phase: CardiacPhase) -> float:
    """Exact phase value; requires the kind to be feasible in this study."""
    if kind not in study.cycle.values or not study.quality.visible.get(kind, False):
        raise NotFeasible(f"{kind.value} is not feasible in study {study.study_id}")
    return phase_value(study, kind, phase)


# ---------------------------------------------------------------------------
# pixel payloads (schematic; for external adapters only)


def render_pixels(study: EchoStudy, height: int, width: int) -> np.ndarray:
    """Schematic frames: sector-shaped gradient plus one bright caliper bar.

    The bar's pixel length encodes the first available kind's current extent,
    so an external tool has something measurable to look at. Not an attempt
    at realistic ultrasound.
    """
    from .domain import value_at

    frames = np.zeros((study.frame_count, height, width), dtype=np.uint8)
    ys = np.linspace(0.0, 1.0, height)[:, None]
    xs = np.linspace(0.0, 1.0, width)[None, :]
    background = (40.0 * (1.0 - ys) * (1.0 - np.abs(xs - 0.5))).astype(np.uint8)
    kinds = sorted(study.cycle.values, key=lambda k: k.value)
    kind = kinds[0]
    row = height // 2
    for t in range(study.frame_count):
        frame = background.copy()
        length_px = min(int(round(value_at(study, kind, t) / study.pixel_scale_cm)), width - 2)
        x0 = (width - length_px) // 2
        frame[row - 1 : row + 2, x0 : x0 + length_px] = 230
        frames[t] = frame
    return frames


# ---------------------------------------------------------------------------
# dataset IO


def _config_doc(config: SimConfig) -> dict:
    doc = asdict(config)
    doc["view_mix"] = {view.value: weight for view, weight in config.view_mix.items()}
    return doc


def save_dataset(studies: Sequence[EchoStudy], directory: str | Path, config: SimConfig | None = None) -> Path:
    """Write manifest plus one JSON document per study. No timestamps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names: list[str] = []
    for study in studies:
        if config is not None and config.with_pixels:
            height, width = config.pixel_size
            pixels = render_pixels(study, height, width)
            pixel_name = f"{study.study_id}.pixels.bin"
            (directory / pixel_name).write_bytes(pixels.tobytes())
            study = EchoStudy(
                **{**study.__dict__, "pixels": PixelRef(pixel_name, width, height, study.frame_count)}
            )
        name = f"{study.study_id}.json"
        (directory / name).write_text(
            json.dumps(study_to_dict(study), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        names.append(name)
    manifest = {
        "schema": SCHEMA_DATASET,
        "study_files": names,
        "config": _config_doc(config) if config is not None else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_dataset(directory: str | Path) -> list[EchoStudy]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"{directory} has no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema") != SCHEMA_DATASET:
        raise ConfigError(f"unsupported dataset schema {manifest.get('schema')!r}")
    studies = []
    for name in manifest["study_files"]:
        doc = json.loads((directory / name).read_text(encoding="utf-8"))
        study = study_from_dict(doc)
        report = validate_study(study)
        if not report.ok:
            raise ConfigError(f"{name}: {report.violations}")
        studies.append(study)
    return studies


def load_pixels(directory: str | Path, study: EchoStudy) -> np.ndarray:
    if study.pixels is None:
        raise ConfigError(f"study {study.study_id} has no pixel payload")
    ref = study.pixels
    raw = (Path(directory) / ref.path).read_bytes()
    return np.frombuffer(raw, dtype=np.uint8).reshape(ref.frames, ref.height, ref.width)


# ---------------------------------------------------------------------------
# benchmark cases


@dataclass(frozen=True)
class GoldClaim:
    """One judgeable assertion inside a gold answer."""

    type: str  # "numeric" | "category"
    kind: str | None = None  # MeasurementKind value or derived-index name
    value: float | None = None
    unit: str | None = None
    tolerance: float | None = None
    category: str | None = None  # "not_measurable" | "increased" | "normal"


@dataclass(frozen=True)
class GoldAnswer:
    text: str
    claims: tuple[GoldClaim, ...]
    formula: str | None = None


@dataclass(frozen=True)
class BenchmarkCase:
    case_id: str
    study_id: str
    difficulty: str
    question: str
    gold: GoldAnswer


@dataclass(frozen=True)
class DifficultyMix:
    easy: int = 25
    medium: int = 21
    difficult: int = 14

    @property
    def total(self) -> int:
        return self.easy + self.medium + self.difficult


def default_tolerance(value: float, unit: str | None) -> float:
    """0.2 cm or 10 percent, whichever is larger; 0.05 floor for ratios."""
    if unit == "cm":
        return max(0.2, 0.10 * abs(value))
    return max(0.05, 0.10 * abs(value))


def _fmt(value: float) -> str:
    return f"{value:.2f}"


# -- suitability helpers ------------------------------------------------------


def _feasible_at_phase(study: EchoStudy, kind: MeasurementKind, phase: CardiacPhase) -> bool:
    """Measurable in principle: visible and at least one clean phase frame."""
    if kind not in study.cycle.values or not study.quality.visible.get(kind, False):
        return False
    return any(kind_feasible(study, kind, f) for f in phase_frames(study, phase))


def _invisible_kinds(study: EchoStudy) -> list[MeasurementKind]:
    """Evaluated kinds the view supports but quality hides (trap material)."""
    return [
        kind
        for kind in EVALUATED_KINDS
        if kind in study.cycle.values and not study.quality.visible.get(kind, False)
    ]


def _visible_kinds(study: EchoStudy, phase: CardiacPhase) -> list[MeasurementKind]:
    return [kind for kind in EVALUATED_KINDS if _feasible_at_phase(study, kind, phase)]


def _threshold_margin(study: EchoStudy, kind: MeasurementKind, phase: CardiacPhase) -> float:
    """Safety margin so calibrated noise rarely flips a threshold verdict."""
    from .vision import MEASUREMENT_MAE_TARGETS, measurement_sigma

    sigma = measurement_sigma(MEASUREMENT_MAE_TARGETS[kind])
    ed, es = study.cycle.values[kind]
    amplitude = abs(ed - es)
    period = study.cycle.period_frames
    phase_slack = amplitude / 2.0 * (1.0 - math.cos(2.0 * math.pi * 3.0 / period))
    return 2.5 * sigma + phase_slack


def _threshold_side(study: EchoStudy, kind: MeasurementKind, phase: CardiacPhase) -> str | None:
    """'increased', 'normal', or None when too close to the cutoff to judge."""
    ref = REFERENCE_RANGES[kind]
    value = phase_value(study, kind, phase)
    margin = _threshold_margin(study, kind, phase)
    if value > ref.upper_cm + margin:
        return "increased"
    if value < ref.upper_cm - margin:
        return "normal"
    return None


# -- case builders ------------------------------------------------------------
# Each builder returns a BenchmarkCase or None when the study does not fit.


def _numeric_claim(kind: MeasurementKind, value: float) -> GoldClaim:
    return GoldClaim(type="numeric", kind=kind.value, value=round(value, 4), unit="cm", tolerance=round(default_tolerance(value, "cm"), 4))


def _trap_claim(kind: MeasurementKind) -> GoldClaim:
    return GoldClaim(type="category", kind=kind.value, category="not_measurable")


def _phase_name(phase: CardiacPhase) -> str:
    return phase.value


def _build_easy_value(study: EchoStudy, phase: CardiacPhase, case_id: str) -> BenchmarkCase | None:
    kinds = _visible_kinds(study, phase)
    if not kinds:
        return None
    kind = kinds[0]
    value = phase_value(study, kind, phase)
    question = f"What is the {KIND_LABELS[kind]} ({kind.value}) at {_phase_name(phase)}?"
    gold = GoldAnswer(
        text=f"{kind.value} at {_phase_name(phase)}: {_fmt(value)} cm.",
        claims=(_numeric_claim(kind, value),),
    )
    return BenchmarkCase(case_id, study.study_id, DIFF_EASY, question, gold)


def _build_easy_trap(study: EchoStudy, phase: CardiacPhase, case_id: str) -> BenchmarkCase | None:
    hidden = _invisible_kinds(study)
    if not hidden:
        return None
    kind = hidden[0]
    question = f"What is the {KIND_LABELS[kind]} ({kind.value}) at {_phase_name(phase)}?"
    gold = GoldAnswer(
        text=f"{kind.value} is not reliably measurable in this study.",
        claims=(_trap_claim(kind),),
    )
    return BenchmarkCase(case_id, study.study_id, DIFF_EASY, question, gold)


def _build_medium_plain(study: EchoStudy, phase: CardiacPhase, case_id: str) -> BenchmarkCase | None:
    kinds = _visible_kinds(study, phase)
    if len(kinds) < 2:
        return None
    chosen = kinds[:3] if len(kinds) >= 3 else kinds[:2]
    names = ", ".join(k.value for k in chosen)
    question = f"Report the following measurements at {_phase_name(phase)}: {names}."
    claims = tuple(_numeric_claim(k, phase_value(study, k, phase)) for k in chosen)
    text = "; ".join(f"{k.value}: {_fmt(phase_value(study, k, phase))} cm" for k in chosen) + "."
    return BenchmarkCase(case_id, study.study_id, DIFF_MEDIUM, question, GoldAnswer(text, claims))


def _build_medium_trap(study: EchoStudy, phase: CardiacPhase, case_id: str) -> BenchmarkCase | None:
    hidden = _invisible_kinds(study)
    feasible = _visible_kinds(study, phase)
    if len(hidden) < 2 or not feasible:
        return None
    chosen = [feasible[0], hidden[0], hidden[1]]
    names = ", ".join(k.value for k in chosen)
    question = f"Report the following measurements at {_phase_name(phase)}: {names}."
    claims = (
        _numeric_claim(chosen[0], phase_value(study, chosen[0], phase)),
        _trap_claim(chosen[1]),
        _trap_claim(chosen[2]),
    )
    text = (
        f"{chosen[0].value}: {_fmt(phase_value(study, chosen[0], phase))} cm; "
        f"{chosen[1].value} and {chosen[2].value} are not reliably measurable."
    )
    return BenchmarkCase(case_id, study.study_id, DIFF_MEDIUM, question, GoldAnswer(text, claims))


def _build_medium_combo(study: EchoStudy, wanted: str, case_id: str) -> BenchmarkCase | None:
    phase = CardiacPhase.ED
    kinds = _visible_kinds(study, phase)
    if len(kinds) < 2:
        return None
    subject = None
    for kind in kinds:
        if _threshold_side(study, kind, phase) == wanted:
            subject = kind
            break
    if subject is None:
        return None
    other = next((k for k in kinds if k is not subject), None)
    if other is None:
        return None
    ref = REFERENCE_RANGES[subject]
    question = (
        f"Measure the {other.value} and the {subject.value} at {_phase_name(phase)}. "
        f"Based on current guidelines, is the {KIND_LABELS[subject]} {ref.abnormal_term}?"
    )
    value_other = phase_value(study, other, phase)
    value_subject = phase_value(study, subject, phase)
    category = "increased" if wanted == "increased" else "normal"
    verdict = ref.abnormal_term if category == "increased" else "normal"
    claims = (
        _numeric_claim(other, value_other),
        _numeric_claim(subject, value_subject),
        GoldClaim(type="category", kind=subject.value, category=category),
    )
    text = (
        f"{other.value}: {_fmt(value_other)} cm; {subject.value}: {_fmt(value_subject)} cm; "
        f"the {KIND_LABELS[subject]} is {verdict}."
    )
    return BenchmarkCase(case_id, study.study_id, DIFF_MEDIUM, question, GoldAnswer(text, claims))


def _build_rwt(study: EchoStudy, case_id: str) -> BenchmarkCase | None:
    phase = CardiacPhase.ED
    needed = (MeasurementKind.LVPW, MeasurementKind.LVID)
    if not all(_feasible_at_phase(study, k, phase) for k in needed):
        return None
    lvpw = phase_value(study, MeasurementKind.LVPW, phase)
    lvid = phase_value(study, MeasurementKind.LVID, phase)
    rwt = 2.0 * lvpw / lvid
    question = "Compute the relative wall thickness (RWT) for this study using end-diastole measurements."
    claims = (GoldClaim(type="numeric", kind="RWT", value=round(rwt, 4), unit=None, tolerance=round(default_tolerance(rwt, None), 4)),)
    gold = GoldAnswer(
        text=f"RWT = 2 x {_fmt(lvpw)} / {_fmt(lvid)} = {rwt:.2f}.",
        claims=claims,
        formula="RWT = 2 * LVPW / LVID, both at end-diastole",
    )
    return BenchmarkCase(case_id, study.study_id, DIFF_DIFFICULT, question, gold)


def _build_la_ao(study: EchoStudy, case_id: str) -> BenchmarkCase | None:
    phase = CardiacPhase.ES
    needed = (MeasurementKind.LA, MeasurementKind.AORTIC_ROOT)
    if not all(_feasible_at_phase(study, k, phase) for k in needed):
        return None
    la = phase_value(study, MeasurementKind.LA, phase)
    ao = phase_value(study, MeasurementKind.AORTIC_ROOT, phase)
    ratio = la / ao
    question = "Compute the LA to aortic root ratio (LA/Ao) at end-systole for this study."
    claims = (GoldClaim(type="numeric", kind="LA/Ao", value=round(ratio, 4), unit=None, tolerance=round(default_tolerance(ratio, None), 4)),)
    gold = GoldAnswer(
        text=f"LA/Ao = {_fmt(la)} / {_fmt(ao)} = {ratio:.2f}.",
        claims=claims,
        formula="LA/Ao = LA / aortic root, both at end-systole",
    )
    return BenchmarkCase(case_id, study.study_id, DIFF_DIFFICULT, question, gold)


def _build_threshold(study: EchoStudy, wanted: str, case_id: str) -> BenchmarkCase | None:
    phase = CardiacPhase.ED
    for kind in _visible_kinds(study, phase):
        if _threshold_side(study, kind, phase) == wanted:
            ref = REFERENCE_RANGES[kind]
            question = (
                f"Based on current guidelines, is the {KIND_LABELS[kind]} ({kind.value}) "
                f"{ref.abnormal_term} at {_phase_name(phase)}?"
            )
            category = "increased" if wanted == "increased" else "normal"
            verdict = ref.abnormal_term if category == "increased" else "normal"
            value = phase_value(study, kind, phase)
            gold = GoldAnswer(
                text=f"The {KIND_LABELS[kind]} is {verdict} ({_fmt(value)} cm).",
                claims=(GoldClaim(type="category", kind=kind.value, category=category),),
            )
            return BenchmarkCase(case_id, study.study_id, DIFF_DIFFICULT, question, gold)
    return None


def _build_reasoning_trap(study: EchoStudy, case_id: str) -> BenchmarkCase | None:
    phase = CardiacPhase.ED
    hidden = _invisible_kinds(study)
    feasible = _visible_kinds(study, phase)
    if len(hidden) < 2 or len(feasible) < 2:
        return None
    chosen = [feasible[0], hidden[0], feasible[1], hidden[1]]
    names = ", ".join(k.value for k in chosen)
    question = (
        f"Which of the following can be reliably measured in this study: {names}? "
        f"Report values at {_phase_name(phase)} for those that can."
    )
    claims: list[GoldClaim] = []
    parts: list[str] = []
    for kind in chosen:
        if kind in hidden:
            claims.append(_trap_claim(kind))
            parts.append(f"{kind.value} is not reliably measurable")
        else:
            value = phase_value(study, kind, phase)
            claims.append(_numeric_claim(kind, value))
            parts.append(f"{kind.value}: {_fmt(value)} cm")
    return BenchmarkCase(
        case_id, study.study_id, DIFF_DIFFICULT, question, GoldAnswer("; ".join(parts) + ".", tuple(claims))
    )


# -- generator ----------------------------------------------------------------


@dataclass(frozen=True)
class CaseTemplate:
    """Named builder: (study, case_id) -> case or None when unsuitable."""

    name: str
    difficulty: str
    build: object  # Callable[[EchoStudy, str], BenchmarkCase | None]


def default_templates(mix: DifficultyMix) -> list[CaseTemplate]:
    """Concatenated per-slot plan realizing the difficulty mix.

    Easy: 4 value questions then 1 hidden-kind trap, repeating. Every third
    value question asks end-systole. Medium: plain multi-measurement, traps
    with two hidden kinds, and guideline combos split evenly between normal
    and abnormal golds. Difficult: derived indices, guideline thresholds and
    reasoning traps.
    """
    plan: list[CaseTemplate] = []

    value_slot = 0
    for slot in range(mix.easy):
        if slot % 5 == 4:
            plan.append(CaseTemplate("easy_trap", DIFF_EASY, lambda s, cid: _build_easy_trap(s, CardiacPhase.ED, cid)))
            continue
        phase = CardiacPhase.ES if value_slot % 3 == 2 else CardiacPhase.ED
        plan.append(
            CaseTemplate(
                "easy_value",
                DIFF_EASY,
                (lambda p: lambda s, cid: _build_easy_value(s, p, cid))(phase),
            )
        )
        value_slot += 1

    # roughly 3:2:2 split between plain, trap and guideline-combo questions
    trap_count = round(mix.medium * 2 / 7)
    combo_count = round(mix.medium * 2 / 7)
    plain_count = mix.medium - trap_count - combo_count
    for slot in range(plain_count):
        phase = CardiacPhase.ES if slot % 3 == 2 else CardiacPhase.ED
        plan.append(
            CaseTemplate(
                "medium_plain",
                DIFF_MEDIUM,
                (lambda p: lambda s, cid: _build_medium_plain(s, p, cid))(phase),
            )
        )
    for _ in range(trap_count):
        plan.append(CaseTemplate("medium_trap", DIFF_MEDIUM, lambda s, cid: _build_medium_trap(s, CardiacPhase.ED, cid)))
    for slot in range(combo_count):
        wanted = "increased" if slot % 2 == 0 else "normal"
        plan.append(
            CaseTemplate(
                "medium_combo",
                DIFF_MEDIUM,
                (lambda w: lambda s, cid: _build_medium_combo(s, w, cid))(wanted),
            )
        )

    rwt_count = min(4, mix.difficult)
    ratio_count = min(3, max(mix.difficult - rwt_count, 0))
    threshold_count = min(4, max(mix.difficult - rwt_count - ratio_count, 0))
    trap2_count = max(mix.difficult - rwt_count - ratio_count - threshold_count, 0)
    for _ in range(rwt_count):
        plan.append(CaseTemplate("difficult_rwt", DIFF_DIFFICULT, lambda s, cid: _build_rwt(s, cid)))
    for _ in range(ratio_count):
        plan.append(CaseTemplate("difficult_la_ao", DIFF_DIFFICULT, lambda s, cid: _build_la_ao(s, cid)))
    for slot in range(threshold_count):
        wanted = "increased" if slot % 2 == 0 else "normal"
        plan.append(
            CaseTemplate(
                "difficult_threshold",
                DIFF_DIFFICULT,
                (lambda w: lambda s, cid: _build_threshold(s, w, cid))(wanted),
            )
        )
    for _ in range(trap2_count):
        plan.append(CaseTemplate("difficult_reasoning_trap", DIFF_DIFFICULT, lambda s, cid: _build_reasoning_trap(s, cid)))
    return plan


def generate_benchmark(
    studies: Sequence[EchoStudy],
    templates: Sequence[CaseTemplate] | None = None,
    mix: DifficultyMix = DifficultyMix(),
    seed: int = 0,
) -> tuple[list[BenchmarkCase], list[str]]:
    """Fill the template plan from the study pool.

    Studies are tried in a seeded rotation; a template with no suitable study
    is skipped with a warning rather than faked.
    """
    if not studies:
        raise ConfigError("benchmark generation needs at least one study")
    plan = list(templates) if templates is not None else default_templates(mix)
    order = list(range(len(studies)))
    substream(seed, "bench-order").shuffle(order)

    cases: list[BenchmarkCase] = []
    warnings: list[str] = []
    used: set[tuple[str, str]] = set()
    cursor = 0
    for slot, template in enumerate(plan):
        case_id = f"case_{slot:03d}"
        built: BenchmarkCase | None = None
        # two sweeps: prefer a study not yet used for this template name
        for allow_reuse in (False, True):
            if built is not None:
                break
            for probe in range(len(studies)):
                study = studies[order[(cursor + probe) % len(studies)]]
                if not allow_reuse and (template.name, study.study_id) in used:
                    continue
                candidate = template.build(study, case_id)
                if candidate is not None:
                    built = candidate
                    used.add((template.name, study.study_id))
                    cursor = (cursor + probe + 1) % len(studies)
                    break
        if built is None:
            message = f"no suitable study for template {template.name!r} (slot {slot}); case skipped"
            warnings.append(message)
            log.warning(message)
            continue
        cases.append(built)
    return cases, warnings


# -- benchmark file IO ---------------------------------------------------------


def _claim_to_doc(claim: GoldClaim) -> dict:
    doc = {"type": claim.type, "kind": claim.kind}
    if claim.type == "numeric":
        doc.update({"value": claim.value, "unit": claim.unit, "tolerance": claim.tolerance})
    else:
        doc.update({"category": claim.category})
    return doc


def save_benchmark(cases: Sequence[BenchmarkCase], path: str | Path, mix: DifficultyMix | None = None, seed: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": SCHEMA_BENCH,
        "case_count": len(cases),
        "seed": seed,
        "mix": asdict(mix) if mix is not None else None,
        "tolerance_rule": "max(0.2 cm, 10% relative) for lengths; max(0.05, 10% relative) for ratios",
    }
    lines = [json.dumps(meta, sort_keys=True)]
    for case in cases:
        doc = {
            "case_id": case.case_id,
            "study_id": case.study_id,
            "difficulty": case.difficulty,
            "question": case.question,
            "gold_answer": {
                "text": case.gold.text,
                "claims": [_claim_to_doc(c) for c in case.gold.claims],
                "formula": case.gold.formula,
            },
        }
        lines.append(json.dumps(doc, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_benchmark(path: str | Path) -> list[BenchmarkCase]:
    cases: list[BenchmarkCase] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if doc.get("schema") == SCHEMA_BENCH:
            continue
        gold_doc = doc["gold_answer"]
        claims = tuple(
            GoldClaim(
                type=c["type"],
                kind=c.get("kind"),
                value=c.get("value"),
                unit=c.get("unit"),
                tolerance=c.get("tolerance"),
                category=c.get("category"),
            )
            for c in gold_doc["claims"]
        )
        cases.append(
            BenchmarkCase(
                case_id=doc["case_id"],
                study_id=doc["study_id"],
                difficulty=doc["difficulty"],
                question=doc["question"],
                gold=GoldAnswer(gold_doc["text"], claims, gold_doc.get("formula")),
            )
        )
    return cases
