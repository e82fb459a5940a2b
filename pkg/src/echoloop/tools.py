"""Registry wiring: expose oracles and retrieval as callable agent tools."""
from __future__ import annotations

from dataclasses import dataclass

from .domain import ALL_KINDS, EchoStudy, MeasurementKind
from .errors import ConfigError
from .guidelines import DEFAULT_TOP_K, GuidelineIndex
from .protocol import ParamSpec, ToolDescriptor, ToolRegistry
from .vision import NoiseProfile, detect_phases, measure, predict_feasibility

TOOL_DETECT_PHASES = "detect_phases"
TOOL_PREDICT_FEASIBILITY = "predict_feasibility"
TOOL_MEASURE = "measure"
TOOL_SEARCH_GUIDELINE = "search_guideline"


@dataclass
class ToolContext:
    """Per-session execution context handed to every handler."""

    study: EchoStudy
    noise: NoiseProfile
    guideline_index: GuidelineIndex | None = None


def _detect_phases_handler(ctx: ToolContext) -> dict:
    result = detect_phases(ctx.study, ctx.noise)
    return {"ed_frames": list(result.ed_frames), "es_frames": list(result.es_frames)}


def _predict_feasibility_handler(ctx: ToolContext, frame: int) -> dict:
    result = predict_feasibility(ctx.study, frame, ctx.noise)
    return {
        "frame": result.frame,
        "feasible": {kind.value: bool(flag) for kind, flag in result.feasible.items()},
    }


def _measure_handler(ctx: ToolContext, kind: str, frame: int) -> dict:
    result = measure(ctx.study, frame, MeasurementKind(kind), ctx.noise)
    return {
        "kind": result.kind.value,
        "frame": result.frame,
        "value_cm": result.value_cm,
        "endpoints_px": [list(result.endpoints_px[0]), list(result.endpoints_px[1])],
    }


def _search_guideline_handler(ctx: ToolContext, query: str, k: int = DEFAULT_TOP_K) -> dict:
    if ctx.guideline_index is None:
        raise ConfigError("no guideline index configured for this session")
    hits = ctx.guideline_index.search(query, k=k)
    return {
        "hits": [
            {
                "passage_id": hit.passage.passage_id,
                "doc_id": hit.passage.doc_id,
                "rank": hit.rank,
                "score": round(hit.score, 4),
                "text": hit.passage.text,
            }
            for hit in hits
        ]
    }


def build_registry(include_feasibility: bool = True, include_retrieval: bool = True) -> ToolRegistry:
    """Full tool palette, minus whatever an ablation row disables."""
    registry = ToolRegistry()
    registry.register(
        ToolDescriptor(
            name=TOOL_DETECT_PHASES,
            description="Locate end-diastole and end-systole frame indices for the current study.",
        ),
        _detect_phases_handler,
    )
    registry.register(
        ToolDescriptor(
            name=TOOL_MEASURE,
            description="Place calipers for one measurement kind on one frame; returns the length in cm.",
            params=(
                ParamSpec("kind", "enum", description="measurement kind", enum=tuple(k.value for k in ALL_KINDS)),
                ParamSpec("frame", "integer", description="frame index to measure on"),
            ),
        ),
        _measure_handler,
    )
    if include_feasibility:
        registry.register(
            ToolDescriptor(
                name=TOOL_PREDICT_FEASIBILITY,
                description="Report which measurement kinds look reliably measurable on one frame.",
                params=(ParamSpec("frame", "integer", description="frame index to inspect"),),
            ),
            _predict_feasibility_handler,
        )
    if include_retrieval:
        registry.register(
            ToolDescriptor(
                name=TOOL_SEARCH_GUIDELINE,
                description="Search the guideline reference passages; returns the top ranked excerpts.",
                params=(
                    ParamSpec("query", "string", description="search terms"),
                    ParamSpec("k", "integer", required=False, description="number of passages to return"),
                ),
            ),
            _search_guideline_handler,
        )
    return registry
