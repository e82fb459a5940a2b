"""Model backends and chat rendering.

Two backend families share one interface: a remote OpenAI-compatible
chat-completions client, and scripted backends that deterministically map a
rendered history to text so the whole loop can run offline.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import httpx

from .domain import EchoStudy
from .errors import BackendUnavailable, ConfigError
from .prompts import ANSWER_INSTRUCTION, build_system_prompt
from .protocol import FINISH, ToolDescriptor, find_last_json_object

log = logging.getLogger(__name__)

Message = dict[str, str]


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"  # "scripted" | "remote"
    model: str = "optimal"  # remote model name, or scripted persona name
    base_url: str = "http://localhost:8000/v1"
    api_key_env: str = "ECHOLOOP_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout_s: float = 30.0
    retries: int = 3
    debug: bool = False


class Backend:
    """Anything that can turn a rendered chat into completion text."""

    def complete(self, messages: Sequence[Message]) -> str:  # pragma: no cover - interface
        raise NotImplementedError


# ---------------------------------------------------------------------------
# rendering


def render_study_context(study: EchoStudy) -> str:
    """Metadata the model may legitimately see; no ground-truth channel."""
    return json.dumps(
        {
            "study_id": study.study_id,
            "view": study.view.value,
            "frame_count": study.frame_count,
            "frame_rate": study.frame_rate,
            "pixel_scale_cm_per_px": study.pixel_scale_cm,
        },
        sort_keys=True,
    )


def render_tool_palette(descriptors: Sequence[ToolDescriptor]) -> str:
    return json.dumps([d.to_wire() for d in descriptors], indent=2, sort_keys=True)


def render_history(
    question: str,
    history: Sequence[Any],
    descriptors: Sequence[ToolDescriptor],
    study: EchoStudy | None = None,
) -> list[Message]:
    """Rebuild the full chat from scratch: 2 + 2*len(history) messages.

    Each history entry contributes one assistant turn (thought + action) and
    one observation turn; indices make distinct histories render distinctly.
    """
    system = build_system_prompt(render_tool_palette(descriptors))
    user = f"Question: {question}"
    if study is not None:
        user = f"Study context: {render_study_context(study)}\n\n{user}"
    messages: list[Message] = [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]
    for index, entry in enumerate(history):
        thought = entry.thought or ""
        action_json = entry.action.serialize() if entry.action is not None else entry.raw_action
        messages.append(
            {"role": "assistant", "content": f"{thought}\n\nAction {index}: {action_json}".strip()}
        )
        observation = json.dumps(entry.result.to_wire(), sort_keys=True)
        messages.append({"role": "user", "content": f"Observation {index}: {observation}"})
    return messages


def extract_thought_and_call(text: str) -> tuple[str, str | None]:
    """Split a completion into (thought, raw call text).

    The call is the last well-formed JSON object in the text; everything
    before it is the thought. No object at all means no call.
    """
    found = find_last_json_object(text)
    if found is None:
        return text.strip(), None
    start, end, _ = found
    return text[:start].strip(), text[start:end]


def is_answer_request(messages: Sequence[Message]) -> bool:
    return bool(messages) and messages[-1]["content"] == ANSWER_INSTRUCTION


def reasoning_step_index(messages: Sequence[Message]) -> int:
    """How many (assistant, observation) pairs precede this call."""
    return sum(1 for m in messages if m["role"] == "assistant")


# ---------------------------------------------------------------------------
# scripted backends


@dataclass(frozen=True)
class ScriptTurn:
    """One scripted emission, matched by step index or history predicate."""

    text: str
    at_step: int | None = None
    when: Callable[[Sequence[Message]], bool] | None = None


DEFAULT_FINISH_TEXT = f'No further evidence needed.\n{{"name": "{FINISH}", "arguments": {{}}}}'


class ScriptedBackend(Backend):
    """Pure function of the rendered history; same input, same text.

    Steps without an explicit turn fall back to a FINISH emission, so every
    step index 0..K has a defined emission.
    """

    def __init__(
        self,
        turns: Sequence[ScriptTurn] = (),
        answer_text: str | Callable[[Sequence[Message]], str] = "Done.",
    ) -> None:
        self.turns = tuple(turns)
        self.answer_text = answer_text

    @classmethod
    def from_texts(cls, texts: Sequence[str], answer_text: str | Callable[[Sequence[Message]], str] = "Done.") -> "ScriptedBackend":
        return cls([ScriptTurn(text=t, at_step=i) for i, t in enumerate(texts)], answer_text)

    def complete(self, messages: Sequence[Message]) -> str:
        if is_answer_request(messages):
            if callable(self.answer_text):
                return self.answer_text(messages)
            return self.answer_text
        step = reasoning_step_index(messages)
        for turn in self.turns:
            if turn.at_step is not None and turn.at_step == step:
                return turn.text
        for turn in self.turns:
            if turn.at_step is None and turn.when is not None and turn.when(messages):
                return turn.text
        return DEFAULT_FINISH_TEXT


class PolicyBackend(Backend):
    """Deterministic rule policy over the rendered history.

    Generalizes ScriptedBackend for agents whose next action depends on what
    the observations actually said.
    """

    def __init__(self, policy: Callable[[Sequence[Message]], str]) -> None:
        self.policy = policy

    def complete(self, messages: Sequence[Message]) -> str:
        return self.policy(messages)


class CountingBackend(Backend):
    """Wrapper that counts round trips; used to audit budget guarantees."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.calls = 0

    def complete(self, messages: Sequence[Message]) -> str:
        self.calls += 1
        return self.inner.complete(messages)


# ---------------------------------------------------------------------------
# remote backend


class RemoteBackend(Backend):
    """OpenAI-compatible chat-completions client.

    Retries transport errors and 5xx responses up to config.retries total
    attempts; a well-formed completion is never retried.
    """

    def __init__(self, config: BackendConfig, api_key: str | None = None, transport: httpx.BaseTransport | None = None) -> None:
        if config.kind != "remote":
            raise ConfigError(f"RemoteBackend requires kind='remote', got {config.kind!r}")
        self.config = config
        self._api_key = api_key
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)

    def complete(self, messages: Sequence[Message]) -> str:
        body = {
            "model": self.config.model,
            "messages": list(messages),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"

        if self.config.debug:
            log.debug("POST %s body=%s", url, json.dumps(body)[:2000])

        last_error: str = "no attempts made"
        for attempt in range(max(1, self.config.retries)):
            try:
                response = self._client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if response.status_code >= 500:
                    last_error = f"server error {response.status_code}"
                else:
                    try:
                        data = response.json()
                        text = data["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise BackendUnavailable(f"malformed completion payload: {exc}") from exc
                    if self.config.debug:
                        log.debug("completion=%s", text[:2000])
                    return text
            if attempt + 1 < max(1, self.config.retries):
                time.sleep(0.05 * (attempt + 1))
        raise BackendUnavailable(f"completion endpoint failed after {self.config.retries} attempts: {last_error}")
