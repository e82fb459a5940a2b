"""Exception taxonomy shared across the package.

Protocol-level rejection classes (Malformed, UnknownTool, InvalidArguments,
ExecutionFailure) are the only kinds that may appear on a ToolResult; every
other exception here aborts the operation that raised it.
"""
from __future__ import annotations


class EchoLoopError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------------------
# tool protocol


class ProtocolError(EchoLoopError):
    """A tool call was rejected before or during dispatch."""

    #: stable wire identifier, overridden by subclasses
    kind = "protocol_error"


class MalformedCall(ProtocolError):
    """Raw text did not contain one well-formed structured call."""

    kind = "Malformed"


class UnknownTool(ProtocolError):
    """Call named a tool absent from the registry."""

    kind = "UnknownTool"


class InvalidArguments(ProtocolError):
    """Arguments failed schema validation for the named tool."""

    kind = "InvalidArguments"


class ExecutionFailure(ProtocolError):
    """The handler raised while executing a validated call."""

    kind = "ExecutionFailure"


class DuplicateTool(EchoLoopError):
    """A tool name was registered twice."""


# ---------------------------------------------------------------------------
# domain / simulator


class InvalidScale(EchoLoopError):
    """Pixel spacing must be a positive finite number."""


class ConfigError(EchoLoopError):
    """Simulator or app configuration violates its documented bounds."""


# ---------------------------------------------------------------------------
# vision tools


class NoCycle(EchoLoopError):
    """Study does not cover one full cardiac cycle."""


class BadFrame(EchoLoopError):
    """Frame index outside [0, frame_count)."""


class NotFeasible(EchoLoopError):
    """Kind has no ground-truth curve in this study's view at all."""


class NotMeasurable(EchoLoopError):
    """Requested kind is not feasible at the requested frame."""


class AdapterProtocolError(EchoLoopError):
    """External tool endpoint returned a malformed response."""


# ---------------------------------------------------------------------------
# retrieval


class InvalidChunking(EchoLoopError):
    """Chunk size/overlap combination is not satisfiable."""


class EmptyCorpus(EchoLoopError):
    """Index build requires at least one document."""


class EmptyQuery(EchoLoopError):
    """Search queries must contain at least one token."""


# ---------------------------------------------------------------------------
# gateway / loop / harness


class BackendUnavailable(EchoLoopError):
    """Remote completion endpoint unreachable after retries."""


class SessionError(EchoLoopError):
    """Session aborted by a transport failure; partial state attached."""

    def __init__(self, message: str, state: object | None = None):
        super().__init__(message)
        self.state = state


class MetricsError(EchoLoopError):
    """Metric inputs are misaligned or empty."""


class JudgeError(EchoLoopError):
    """Gold answer or judge configuration is unusable."""
