"""Guideline-grounded agent runtime for echocardiographic measurement.

The package wires four layers together:

* a synthetic echo study simulator plus vision-tool oracles (`sim`, `vision`),
* a typed tool-call protocol and dispatch registry (`protocol`, `tools`),
* the observe/think/act session loop with its model gateway (`loop`,
  `gateway`, `personas`),
* retrieval, benchmarking and the HTTP service (`guidelines`, `bench`,
  `service`).

Most callers only need the names re-exported here; the submodules stay
importable for anything deeper.
"""
from __future__ import annotations

from .bench import RunReport, ablation_run, judge_answer, run_benchmark
from .domain import (
    CardiacPhase,
    EchoStudy,
    EchoView,
    MeasurementKind,
    study_from_dict,
    study_to_dict,
)
from .errors import EchoLoopError
from .gateway import BackendConfig, PolicyBackend, ScriptedBackend
from .guidelines import GuidelineIndex, build_reference_index
from .loop import FinalAnswer, SessionState, SessionStatus, run_session
from .personas import AdversarialPolicy, MeasurementPolicy
from .protocol import ToolCall, ToolRegistry, ToolResult, parse_tool_call
from .sim import (
    generate_benchmark,
    generate_studies,
    ground_truth_measurement,
    load_benchmark,
    save_benchmark,
)
from .tools import ToolContext, build_registry
from .vision import NoiseProfile, named_noise

__version__ = "0.1.0"

__all__ = [
    "AdversarialPolicy",
    "BackendConfig",
    "CardiacPhase",
    "EchoLoopError",
    "EchoStudy",
    "EchoView",
    "FinalAnswer",
    "GuidelineIndex",
    "MeasurementKind",
    "MeasurementPolicy",
    "NoiseProfile",
    "PolicyBackend",
    "RunReport",
    "ScriptedBackend",
    "SessionState",
    "SessionStatus",
    "ToolCall",
    "ToolContext",
    "ToolRegistry",
    "ToolResult",
    "ablation_run",
    "build_reference_index",
    "build_registry",
    "generate_benchmark",
    "generate_studies",
    "ground_truth_measurement",
    "judge_answer",
    "load_benchmark",
    "named_noise",
    "parse_tool_call",
    "run_benchmark",
    "run_session",
    "save_benchmark",
    "study_from_dict",
    "study_to_dict",
    "__version__",
]
