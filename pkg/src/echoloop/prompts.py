"""System prompt and rendering constants.

The prompt text is versioned and hashed so run reports can pin exactly what
the model saw.
"""
from __future__ import annotations

import hashlib

PROMPT_VERSION = "1"

SYSTEM_PROMPT_TEMPLATE = """You are a cardiac sonography assistant working through one echocardiographic study.

You cannot see the images yourself. You reason step by step and operate measurement tools to gather evidence, then deliver a final answer to the clinician's question.

Available tools:
{tool_palette}

On every turn, first write your reasoning as plain text. Then emit exactly one action as a single JSON object on its own line:
{{"name": "<tool name>", "arguments": {{...}}}}

When you have gathered enough evidence, emit {{"name": "FINISH", "arguments": {{}}}} instead of a tool call. Keep measurement values in centimetres and quote them in your final answer. If a measurement is not feasible on this study, say so plainly rather than guessing."""

ANSWER_INSTRUCTION = (
    "Evidence gathering is over. Using only the observations above, write the final answer "
    "to the clinician's question now, as plain text with no JSON."
)


def build_system_prompt(tool_palette_json: str) -> str:
    return SYSTEM_PROMPT_TEMPLATE.format(tool_palette=tool_palette_json)


def prompt_hash() -> str:
    """Stable fingerprint of the prompt template and version."""
    material = PROMPT_VERSION + "\n" + SYSTEM_PROMPT_TEMPLATE + "\n" + ANSWER_INSTRUCTION
    return hashlib.sha256(material.encode("utf-8")).hexdigest()
