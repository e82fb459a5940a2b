"""Core domain model: measurement kinds, views, studies and their geometry.

A study document carries its own generative cycle parameters and quality
metadata. Oracle tools read that channel directly; pixel payloads exist only
for external adapters and are optional.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .errors import InvalidScale, ConfigError, NotFeasible

SCHEMA_STUDY = "echostudy/1"


class MeasurementKind(str, Enum):
    """Linear measurements the tooling understands.

    The first seven are the clinically standard ones the benchmark grades;
    the rest exist so feasibility vectors cover a realistic label space.
    """

    IVS = "IVS"
    LVID = "LVID"
    LVPW = "LVPW"
    LA = "LA"
    AORTA = "Aorta"
    AORTIC_ROOT = "Aortic root"
    RV_BASE = "RV base"
    LVOT = "LVOT"
    RVOT = "RVOT"
    TAPSE = "TAPSE"
    IVC = "IVC"
    PA = "PA"
    LA_LENGTH = "LA length"
    RA = "RA"
    ASC_AORTA = "Ascending aorta"
    STJ = "Sinotubular junction"


ALL_KINDS: tuple[MeasurementKind, ...] = tuple(MeasurementKind)

EVALUATED_KINDS: tuple[MeasurementKind, ...] = (
    MeasurementKind.IVS,
    MeasurementKind.LVID,
    MeasurementKind.LVPW,
    MeasurementKind.LA,
    MeasurementKind.AORTA,
    MeasurementKind.AORTIC_ROOT,
    MeasurementKind.RV_BASE,
)

# walls thicken toward end-systole; cavities are largest at end-diastole
WALL_KINDS = frozenset({MeasurementKind.IVS, MeasurementKind.LVPW})
CAVITY_KINDS = frozenset({MeasurementKind.LVID, MeasurementKind.LA, MeasurementKind.RV_BASE})

KIND_LABELS: dict[MeasurementKind, str] = {
    MeasurementKind.IVS: "interventricular septal thickness",
    MeasurementKind.LVID: "left ventricular internal diameter",
    MeasurementKind.LVPW: "left ventricular posterior wall thickness",
    MeasurementKind.LA: "left atrial diameter",
    MeasurementKind.AORTA: "aortic diameter",
    MeasurementKind.AORTIC_ROOT: "aortic root diameter",
    MeasurementKind.RV_BASE: "right ventricular basal diameter",
    MeasurementKind.LVOT: "left ventricular outflow tract diameter",
    MeasurementKind.RVOT: "right ventricular outflow tract diameter",
    MeasurementKind.TAPSE: "tricuspid annular plane systolic excursion",
    MeasurementKind.IVC: "inferior vena cava diameter",
    MeasurementKind.PA: "pulmonary artery diameter",
    MeasurementKind.LA_LENGTH: "left atrial length",
    MeasurementKind.RA: "right atrial diameter",
    MeasurementKind.ASC_AORTA: "ascending aortic diameter",
    MeasurementKind.STJ: "sinotubular junction diameter",
}

# phrases accepted when reading a kind out of question or answer text,
# longest-match-first so "aortic root" wins over "aorta"
KIND_ALIASES: dict[MeasurementKind, tuple[str, ...]] = {
    MeasurementKind.IVS: ("interventricular septal thickness", "interventricular septum", "ivs", "septal thickness", "septum"),
    MeasurementKind.LVID: ("left ventricular internal diameter", "lv internal diameter", "lvid"),
    MeasurementKind.LVPW: ("left ventricular posterior wall", "posterior wall", "lvpw"),
    MeasurementKind.LA: ("left atrial diameter", "left atrium", "la diameter", "la"),
    MeasurementKind.AORTA: ("aortic diameter", "aorta"),
    MeasurementKind.AORTIC_ROOT: ("aortic root",),
    MeasurementKind.RV_BASE: ("right ventricular basal diameter", "rv basal diameter", "rv base"),
    MeasurementKind.LVOT: ("left ventricular outflow tract", "lvot"),
    MeasurementKind.RVOT: ("right ventricular outflow tract", "rvot"),
    MeasurementKind.TAPSE: ("tricuspid annular plane systolic excursion", "tapse"),
    MeasurementKind.IVC: ("inferior vena cava", "ivc"),
    MeasurementKind.PA: ("pulmonary artery", "pa diameter"),
    MeasurementKind.LA_LENGTH: ("left atrial length", "la length"),
    MeasurementKind.RA: ("right atrial diameter", "right atrium", "ra diameter"),
    MeasurementKind.ASC_AORTA: ("ascending aorta", "ascending aortic diameter"),
    MeasurementKind.STJ: ("sinotubular junction", "stj"),
}


def kind_from_text(text: str) -> MeasurementKind | None:
    """Resolve a kind mentioned in free text, longest alias first."""
    lowered = text.lower()
    best: tuple[int, MeasurementKind] | None = None
    for kind, aliases in KIND_ALIASES.items():
        for alias in aliases:
            if alias in lowered and (best is None or len(alias) > best[0]):
                best = (len(alias), kind)
    return best[1] if best else None


def find_kind_mentions(text: str) -> list[tuple[int, MeasurementKind]]:
    """Every kind mentioned in `text`, as (position, kind) sorted by position.

    Aliases are matched on word boundaries, longest first, and a claimed span
    is masked so "aortic root" never doubles as a mention of the aorta and a
    bare "la" inside another alias never fires.
    """
    lowered = text.lower()
    taken = [False] * len(lowered)
    found: list[tuple[int, MeasurementKind]] = []
    pairs = sorted(
        ((alias, kind) for kind, aliases in KIND_ALIASES.items() for alias in aliases),
        key=lambda pair: -len(pair[0]),
    )
    for alias, kind in pairs:
        for match in re.finditer(rf"\b{re.escape(alias)}\b", lowered):
            start, end = match.span()
            if any(taken[start:end]):
                continue
            taken[start:end] = [True] * (end - start)
            found.append((start, kind))
    return sorted(found)


def kinds_in_text(text: str) -> list[MeasurementKind]:
    """Distinct kinds in order of first mention."""
    out: list[MeasurementKind] = []
    for _, kind in find_kind_mentions(text):
        if kind not in out:
            out.append(kind)
    return out


class EchoView(str, Enum):
    PLAX = "PLAX"
    PLAX_ZOOM = "PLAX zoom"
    PSAX_AV = "PSAX aortic valve"
    PSAX_MV = "PSAX mitral valve"
    PSAX_PM = "PSAX papillary muscle"
    A4C = "Apical 4-chamber"
    A2C = "Apical 2-chamber"
    A3C = "Apical 3-chamber"
    A5C = "Apical 5-chamber"
    SUBCOSTAL_4C = "Subcostal 4-chamber"
    SUBCOSTAL_IVC = "Subcostal IVC"
    SUPRASTERNAL = "Suprasternal"
    RV_INFLOW = "RV inflow"


K = MeasurementKind
VIEW_KINDS: dict[EchoView, frozenset[MeasurementKind]] = {
    EchoView.PLAX: frozenset({K.IVS, K.LVID, K.LVPW, K.AORTA, K.AORTIC_ROOT, K.LA, K.LVOT, K.STJ}),
    EchoView.PLAX_ZOOM: frozenset({K.AORTA, K.AORTIC_ROOT, K.LVOT, K.STJ, K.LA}),
    EchoView.PSAX_AV: frozenset({K.AORTA, K.AORTIC_ROOT, K.RVOT, K.PA, K.LA}),
    EchoView.PSAX_MV: frozenset({K.IVS, K.LVID, K.LVPW}),
    EchoView.PSAX_PM: frozenset({K.IVS, K.LVID, K.LVPW}),
    EchoView.A4C: frozenset({K.LA, K.LA_LENGTH, K.RV_BASE, K.RA, K.TAPSE}),
    EchoView.A2C: frozenset({K.LA, K.LA_LENGTH}),
    EchoView.A3C: frozenset({K.IVS, K.LVID, K.LVPW, K.LVOT, K.AORTIC_ROOT}),
    EchoView.A5C: frozenset({K.LVOT, K.AORTIC_ROOT, K.AORTA}),
    EchoView.SUBCOSTAL_4C: frozenset({K.IVS, K.RV_BASE, K.RA}),
    EchoView.SUBCOSTAL_IVC: frozenset({K.IVC,}),
    EchoView.SUPRASTERNAL: frozenset({K.AORTA, K.ASC_AORTA}),
    EchoView.RV_INFLOW: frozenset({K.RV_BASE, K.RA, K.TAPSE}),
}
del K


class CardiacPhase(str, Enum):
    ED = "end-diastole"
    ES = "end-systole"


@dataclass(frozen=True)
class CycleParams:
    """Cosine cycle shared by every kind in the study.

    `values` maps each view-feasible kind to its (end-diastolic,
    end-systolic) extent in cm. One curve evaluates all kinds: walls store
    ed < es so they automatically peak opposite the cavities.
    """

    period_frames: int
    offset_frames: int
    values: Mapping[MeasurementKind, tuple[float, float]]


@dataclass(frozen=True)
class DegradedWindow:
    """Contiguous frame range [start, end) where some kinds are unreadable."""

    start: int
    end: int
    kinds: frozenset[MeasurementKind]


@dataclass(frozen=True)
class StudyQuality:
    visible: Mapping[MeasurementKind, bool]
    degraded: tuple[DegradedWindow, ...] = ()


@dataclass(frozen=True)
class PixelRef:
    """Pointer to an optional raw grayscale payload stored next to the study."""

    path: str
    width: int
    height: int
    frames: int
    dtype: str = "uint8"


@dataclass(frozen=True)
class EchoStudy:
    study_id: str
    view: EchoView
    frame_count: int
    frame_rate: float
    pixel_scale_cm: float
    cycle: CycleParams
    quality: StudyQuality
    pixels: PixelRef | None = None


@dataclass(frozen=True)
class Measurement:
    """A single caliper placement: two pixel endpoints and the distance."""

    kind: MeasurementKind
    frame: int
    value_cm: float
    endpoints_px: tuple[tuple[float, float], tuple[float, float]]


def pixels_to_cm(p1: tuple[float, float], p2: tuple[float, float], scale_cm_per_px: float) -> float:
    """Euclidean endpoint distance converted to cm."""
    if not (isinstance(scale_cm_per_px, (int, float)) and math.isfinite(scale_cm_per_px) and scale_cm_per_px > 0):
        raise InvalidScale(f"pixel scale must be positive and finite, got {scale_cm_per_px!r}")
    return math.hypot(p2[0] - p1[0], p2[1] - p1[1]) * scale_cm_per_px


# ---------------------------------------------------------------------------
# cycle geometry


def value_at(study: EchoStudy, kind: MeasurementKind, frame: int) -> float:
    """Ground-truth extent of `kind` at `frame`, interpolated on the cycle.

    value(t) = es + (ed - es) * (1 + cos(2*pi*(t - offset)/period)) / 2,
    which equals ed exactly on declared ED frames and es on ES frames.
    """
    try:
        ed, es = study.cycle.values[kind]
    except KeyError:
        raise NotFeasible(f"study {study.study_id} has no ground-truth curve for {kind.value}") from None
    period = study.cycle.period_frames
    phase = 2.0 * math.pi * (frame - study.cycle.offset_frames) / period
    return es + (ed - es) * (1.0 + math.cos(phase)) / 2.0


def ed_frames(study: EchoStudy) -> tuple[int, ...]:
    """Frames where the cavity curve peaks (cosine maxima)."""
    period = study.cycle.period_frames
    offset = study.cycle.offset_frames % period
    return tuple(range(offset, study.frame_count, period))


def es_frames(study: EchoStudy) -> tuple[int, ...]:
    """Frames half a period after each ED frame (cosine minima)."""
    period = study.cycle.period_frames
    offset = (study.cycle.offset_frames + period // 2) % period
    return tuple(range(offset, study.frame_count, period))


def phase_frames(study: EchoStudy, phase: CardiacPhase) -> tuple[int, ...]:
    return ed_frames(study) if phase is CardiacPhase.ED else es_frames(study)


def phase_value(study: EchoStudy, kind: MeasurementKind, phase: CardiacPhase) -> float:
    ed, es = study.cycle.values[kind]
    return ed if phase is CardiacPhase.ED else es


def kind_feasible(study: EchoStudy, kind: MeasurementKind, frame: int) -> bool:
    """True when `kind` can be measured at `frame`.

    Requires the kind to belong to the study's view, carry its visibility
    flag, and sit outside every degraded window naming it.
    """
    if kind not in VIEW_KINDS[study.view]:
        return False
    if not study.quality.visible.get(kind, True):
        return False
    for window in study.quality.degraded:
        if window.start <= frame < window.end and kind in window.kinds:
            return False
    return True


def feasibility_vector(study: EchoStudy, frame: int) -> dict[MeasurementKind, bool]:
    """Per-kind feasibility bits over the full label space at one frame."""
    return {kind: kind_feasible(study, kind, frame) for kind in ALL_KINDS}


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_study(study: EchoStudy) -> ValidationReport:
    """Collect every schema violation; never raises."""
    bad: list[str] = []
    if study.frame_count < 2:
        bad.append(f"frame_count must be >= 2, got {study.frame_count}")
    if not (math.isfinite(study.pixel_scale_cm) and study.pixel_scale_cm > 0):
        bad.append(f"pixel_scale_cm must be positive and finite, got {study.pixel_scale_cm}")
    if not (math.isfinite(study.frame_rate) and study.frame_rate > 0):
        bad.append(f"frame_rate must be positive, got {study.frame_rate}")

    cycle = study.cycle
    if cycle.period_frames < 4:
        bad.append(f"cycle period must be >= 4 frames, got {cycle.period_frames}")
    if cycle.period_frames % 2 != 0:
        # integer frames can only land on both extrema when the period is even
        bad.append(f"cycle period must be even, got {cycle.period_frames}")
    if not (0 <= cycle.offset_frames < max(cycle.period_frames, 1)):
        bad.append(f"cycle offset must lie in [0, period), got {cycle.offset_frames}")

    view_kinds = VIEW_KINDS[study.view]
    for kind, (ed, es) in cycle.values.items():
        if kind not in view_kinds:
            bad.append(f"{kind.value} has cycle values but is not associated with view {study.view.value}")
        if not (math.isfinite(ed) and math.isfinite(es) and ed > 0 and es > 0):
            bad.append(f"{kind.value} values must be positive and finite, got ({ed}, {es})")
            continue
        if kind in CAVITY_KINDS and ed < es:
            bad.append(f"cavity kind {kind.value} must satisfy ed >= es, got ({ed}, {es})")
        if kind in WALL_KINDS and es < ed:
            bad.append(f"wall kind {kind.value} must satisfy es >= ed, got ({ed}, {es})")

    for kind in study.quality.visible:
        if kind not in view_kinds:
            bad.append(f"visibility flag for {kind.value} outside view {study.view.value}")
    for window in study.quality.degraded:
        if not (0 <= window.start < window.end <= study.frame_count):
            bad.append(f"degraded window [{window.start}, {window.end}) outside [0, {study.frame_count}]")

    if study.pixels is not None:
        px = study.pixels
        if px.width <= 0 or px.height <= 0 or px.frames != study.frame_count:
            bad.append("pixel payload dimensions inconsistent with study")

    return ValidationReport(tuple(bad))


# ---------------------------------------------------------------------------
# serialization (schema echostudy/1)


def study_to_dict(study: EchoStudy) -> dict:
    doc: dict = {
        "schema": SCHEMA_STUDY,
        "study_id": study.study_id,
        "view": study.view.value,
        "frame_count": study.frame_count,
        "frame_rate": study.frame_rate,
        "pixel_scale_cm": study.pixel_scale_cm,
        "cycle": {
            "period_frames": study.cycle.period_frames,
            "offset_frames": study.cycle.offset_frames,
            "values": {kind.value: [ed, es] for kind, (ed, es) in sorted(study.cycle.values.items(), key=lambda item: item[0].value)},
        },
        "quality": {
            "visible": {kind.value: flag for kind, flag in sorted(study.quality.visible.items(), key=lambda item: item[0].value)},
            "degraded": [
                {"start": w.start, "end": w.end, "kinds": sorted(k.value for k in w.kinds)}
                for w in study.quality.degraded
            ],
        },
        "pixels": None,
    }
    if study.pixels is not None:
        doc["pixels"] = {
            "path": study.pixels.path,
            "width": study.pixels.width,
            "height": study.pixels.height,
            "frames": study.pixels.frames,
            "dtype": study.pixels.dtype,
        }
    return doc


def study_from_dict(doc: Mapping) -> EchoStudy:
    if doc.get("schema") != SCHEMA_STUDY:
        raise ConfigError(f"unsupported study schema: {doc.get('schema')!r}")
    try:
        view = EchoView(doc["view"])
        cycle_doc = doc["cycle"]
        values = {
            MeasurementKind(name): (float(pair[0]), float(pair[1]))
            for name, pair in cycle_doc["values"].items()
        }
        quality_doc = doc["quality"]
        visible = {MeasurementKind(name): bool(flag) for name, flag in quality_doc["visible"].items()}
        degraded = tuple(
            DegradedWindow(int(w["start"]), int(w["end"]), frozenset(MeasurementKind(k) for k in w["kinds"]))
            for w in quality_doc.get("degraded", [])
        )
        pixels = None
        if doc.get("pixels"):
            px = doc["pixels"]
            pixels = PixelRef(str(px["path"]), int(px["width"]), int(px["height"]), int(px["frames"]), str(px.get("dtype", "uint8")))
        return EchoStudy(
            study_id=str(doc["study_id"]),
            view=view,
            frame_count=int(doc["frame_count"]),
            frame_rate=float(doc["frame_rate"]),
            pixel_scale_cm=float(doc["pixel_scale_cm"]),
            cycle=CycleParams(int(cycle_doc["period_frames"]), int(cycle_doc["offset_frames"]), values),
            quality=StudyQuality(visible, degraded),
            pixels=pixels,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed study document: {exc}") from exc
