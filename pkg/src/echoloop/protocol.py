"""Typed tool-call protocol: parse, validate, dispatch.

The wire format is a single JSON object {"name": str, "arguments": object}.
Rejections map onto exactly one of four classes (Malformed, UnknownTool,
InvalidArguments, ExecutionFailure) and dispatch itself never raises; a
failing handler becomes an error ToolResult the caller can show the model.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .errors import (
    DuplicateTool,
    ExecutionFailure,
    InvalidArguments,
    MalformedCall,
    ProtocolError,
    UnknownTool,
)

PARAM_TYPES = ("string", "integer", "number", "boolean", "enum")

#: sentinel action name that ends a session; deliberately not a registered tool
FINISH = "FINISH"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool = True
    description: str = ""
    enum: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.type not in PARAM_TYPES:
            raise ValueError(f"unknown parameter type {self.type!r}")
        if self.type == "enum" and not self.enum:
            raise ValueError(f"enum parameter {self.name!r} needs at least one value")


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    params: tuple[ParamSpec, ...] = ()

    def to_wire(self) -> dict:
        """Shape shown to models and served by the tool listing endpoint."""
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [
                {
                    "name": p.name,
                    "type": p.type,
                    "required": p.required,
                    "description": p.description,
                    **({"enum": list(p.enum)} if p.type == "enum" else {}),
                }
                for p in self.params
            ],
        }


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any] = field(default_factory=dict)
    raw_text: str = field(default="", compare=False)

    def serialize(self) -> str:
        return json.dumps({"name": self.name, "arguments": self.arguments}, sort_keys=True)

    @property
    def is_finish(self) -> bool:
        return self.name.strip().upper() == FINISH


@dataclass(frozen=True)
class ValidatedCall:
    tool: ToolDescriptor
    arguments: dict[str, Any]


@dataclass(frozen=True)
class ToolResult:
    ok: bool
    payload: dict[str, Any] = field(default_factory=dict)
    error_kind: str | None = None
    error_detail: str | None = None
    latency_ms: float = 0.0

    def to_wire(self) -> dict:
        """Observation shown back to the model; latency is omitted."""
        if self.ok:
            return {"ok": True, "result": self.payload}
        return {"ok": False, "error": self.error_kind, "detail": self.error_detail}


ToolHandler = Callable[..., dict]


class ToolRegistry:
    """Name -> (descriptor, handler) table. Build fully before sharing."""

    def __init__(self) -> None:
        self._tools: dict[str, tuple[ToolDescriptor, ToolHandler]] = {}

    def register(self, descriptor: ToolDescriptor, handler: ToolHandler) -> "ToolRegistry":
        if descriptor.name in self._tools:
            raise DuplicateTool(f"tool {descriptor.name!r} already registered")
        if descriptor.name.strip().upper() == FINISH:
            raise DuplicateTool(f"{FINISH!r} is a reserved sentinel, not a registerable tool")
        self._tools[descriptor.name] = (descriptor, handler)
        return self

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self._tools))

    def descriptor(self, name: str) -> ToolDescriptor:
        try:
            return self._tools[name][0]
        except KeyError:
            raise UnknownTool(f"no tool named {name!r}") from None

    def handler(self, name: str) -> ToolHandler:
        return self._tools[name][1]

    def descriptors(self) -> tuple[ToolDescriptor, ...]:
        return tuple(self._tools[name][0] for name in sorted(self._tools))

    def subset(self, exclude: Iterable[str] = ()) -> "ToolRegistry":
        """Copy without the named tools; used by ablation rows."""
        dropped = set(exclude)
        out = ToolRegistry()
        for name in sorted(self._tools):
            if name not in dropped:
                descriptor, handler = self._tools[name]
                out.register(descriptor, handler)
        return out


# ---------------------------------------------------------------------------
# parsing


class _DuplicateKey(Exception):
    pass


def _pairs_hook(pairs: list[tuple[str, Any]]) -> dict:
    seen: dict[str, Any] = {}
    for key, value in pairs:
        if key in seen:
            raise _DuplicateKey(key)
        seen[key] = value
    return seen


def find_last_json_object(text: str) -> tuple[int, int, dict] | None:
    """Locate the last well-formed JSON object embedded in `text`.

    Returns (start, end, parsed) or None. Duplicate keys disqualify a
    candidate rather than silently collapsing.
    """
    decoder = json.JSONDecoder(object_pairs_hook=_pairs_hook)
    best: tuple[int, int, dict] | None = None
    idx = text.find("{")
    while idx != -1:
        try:
            obj, end = decoder.raw_decode(text, idx)
        except (ValueError, _DuplicateKey):
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            best = (idx, end, obj)
            # skip past the whole object so nested braces don't shadow it
            idx = text.find("{", end)
        else:
            idx = text.find("{", idx + 1)
    return best


def parse_tool_call(raw: str) -> ToolCall:
    """Parse raw model text into a ToolCall or raise MalformedCall.

    Total over arbitrary byte strings: any input either parses or raises
    exactly MalformedCall.
    """
    if not isinstance(raw, str):
        raise MalformedCall(f"expected text, got {type(raw).__name__}")
    found = find_last_json_object(raw)
    if found is None:
        raise MalformedCall("no well-formed JSON object in model output")
    _, _, obj = found
    name = obj.get("name")
    if not isinstance(name, str) or not name.strip():
        raise MalformedCall("call object must carry a non-empty string 'name'")
    arguments = obj.get("arguments", {})
    if not isinstance(arguments, dict):
        raise MalformedCall("'arguments' must be a JSON object when present")
    return ToolCall(name=name.strip(), arguments=arguments, raw_text=raw)


# ---------------------------------------------------------------------------
# validation


def _check_type(spec: ParamSpec, value: Any) -> tuple[Any, str | None]:
    """Return (canonical value, problem)."""
    if spec.type == "string":
        if isinstance(value, str):
            return value, None
        return value, f"{spec.name} must be a string"
    if spec.type == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            return value, f"{spec.name} must be an integer"
        return value, None
    if spec.type == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return value, f"{spec.name} must be a number"
        return float(value), None
    if spec.type == "boolean":
        if isinstance(value, bool):
            return value, None
        return value, f"{spec.name} must be a boolean"
    # enum: case-insensitive match canonicalized to the declared casing
    if isinstance(value, str):
        for option in spec.enum:
            if option.lower() == value.strip().lower():
                return option, None
    return value, f"{spec.name} must be one of {list(spec.enum)}"


def validate_call(registry: ToolRegistry, call: ToolCall) -> ValidatedCall:
    """Check the call against its descriptor; collect every violation."""
    if call.name not in registry:
        raise UnknownTool(f"no tool named {call.name!r}; available: {list(registry.names())}")
    descriptor = registry.descriptor(call.name)
    specs = {p.name: p for p in descriptor.params}

    problems: list[str] = []
    canonical: dict[str, Any] = {}

    extra = sorted(set(call.arguments) - set(specs))
    if extra:
        problems.append(f"unknown arguments: {extra}")
    for name, spec in specs.items():
        if name not in call.arguments:
            if spec.required:
                problems.append(f"missing required argument {name!r}")
            continue
        value, problem = _check_type(spec, call.arguments[name])
        if problem:
            problems.append(problem)
        else:
            canonical[name] = value

    if problems:
        raise InvalidArguments(f"{call.name}: " + "; ".join(problems))
    return ValidatedCall(tool=descriptor, arguments=canonical)


# ---------------------------------------------------------------------------
# dispatch


def dispatch(registry: ToolRegistry, call: ToolCall, context: Any = None) -> ToolResult:
    """Execute a call and always return a ToolResult, success or not."""
    started = time.perf_counter()

    def _elapsed() -> float:
        return (time.perf_counter() - started) * 1000.0

    try:
        validated = validate_call(registry, call)
    except ProtocolError as exc:
        return ToolResult(ok=False, error_kind=exc.kind, error_detail=str(exc), latency_ms=_elapsed())

    handler = registry.handler(call.name)
    try:
        payload = handler(context, **validated.arguments)
    except Exception as exc:  # noqa: BLE001 - contract: dispatch never raises
        detail = f"{type(exc).__name__}: {exc}"
        return ToolResult(ok=False, error_kind=ExecutionFailure.kind, error_detail=detail, latency_ms=_elapsed())
    if not isinstance(payload, Mapping):
        payload = {"value": payload}
    return ToolResult(ok=True, payload=dict(payload), latency_ms=_elapsed())
