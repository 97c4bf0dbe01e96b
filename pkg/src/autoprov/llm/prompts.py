"""Prompt templates P1-P9 and their rendering."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Mapping

PLATFORM_PLACEHOLDER = "<Platform Name>"


class TemplateId(str, Enum):
    P1 = "P1"  # log summarization
    P2 = "P2"  # entity types extraction
    P3 = "P3"  # entity extraction
    P4 = "P4"  # edge extraction
    P5 = "P5"  # rule generator
    P6 = "P6"  # functional labels
    P7 = "P7"  # unknown-entity flagging
    P8 = "P8"  # attack summary + tactics
    P9 = "P9"  # LLM judge


# (section heading, binding name, required)
_INPUT_SECTIONS: dict[TemplateId, tuple[tuple[str, str, bool], ...]] = {
    TemplateId.P1: (("[LOG]", "log", True),),
    TemplateId.P2: (("[LOG]", "log", True), ("[SUMMARY]", "summary", True)),
    TemplateId.P3: (("[LOG]", "log", True), ("[SUMMARY]", "summary", True)),
    TemplateId.P4: (
        ("[LOG]", "log", True),
        ("[SUMMARY]", "summary", True),
        ("[PAIRS]", "pairs", True),
    ),
    TemplateId.P5: (
        ("[LOG]", "log", True),
        ("[TASK]", "task", True),
        ("[FIELD]", "field", True),
        ("[FIELD VALUE]", "value", True),
        ("[PREVIOUS REGEX]", "previous", False),
        ("[VALIDATION FEEDBACK]", "feedback", False),
    ),
    TemplateId.P6: (("[ENTITY]", "entity", True),),
    TemplateId.P7: (("[ENTITY]", "entity", True),),
    TemplateId.P8: (
        ("[GRAPH]", "edges", True),
        ("[MALICIOUS NODES]", "malicious", True),
        ("[NODE METADATA]", "metadata", True),
        ("[APT TACTICS]", "tactics", True),
    ),
    TemplateId.P9: (
        ("[APT TACTIC]", "tactic", True),
        ("(1) Model Reasoning:", "reasoning", True),
        ("(2) MITRE Reference:", "reference", True),
    ),
}

# extraction/judgment prompts are run cold; voting and narrative prompts warm
DEFAULT_TEMPERATURE: dict[TemplateId, float] = {
    t: (0.7 if t in (TemplateId.P1, TemplateId.P4, TemplateId.P8) else 0.0) for t in TemplateId
}


class MissingBindingError(KeyError):
    def __init__(self, template_id: TemplateId, name: str):
        self.template_id = template_id
        self.name = name
        super().__init__(f"{template_id.value}: missing binding {name!r}")

    def __str__(self) -> str:
        return self.args[0]


@lru_cache(maxsize=None)
def template_text(template_id: TemplateId | str) -> str:
    """The bundled template text, verbatim."""
    tid = TemplateId(template_id)
    return resources.files("autoprov.llm").joinpath("templates", f"{tid.value}.txt").read_text(
        encoding="utf-8"
    )


def required_bindings(template_id: TemplateId | str) -> list[str]:
    tid = TemplateId(template_id)
    names = [name for _, name, req in _INPUT_SECTIONS[tid] if req]
    if PLATFORM_PLACEHOLDER in template_text(tid):
        names.insert(0, "platform")
    return names


@dataclass(frozen=True)
class InContextExample:
    input_text: str
    response: str


@dataclass(frozen=True)
class ChatRequest:
    template_id: TemplateId
    bindings: Mapping[str, str]
    in_context_examples: tuple[InContextExample, ...] = ()
    temperature: float | None = None
    max_tokens: int = 1024
    # Which voting run this request belongs to; never rendered into the prompt.
    vote_index: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "template_id", TemplateId(self.template_id))
        object.__setattr__(self, "bindings", dict(self.bindings))
        object.__setattr__(self, "in_context_examples", tuple(self.in_context_examples))
        if self.temperature is None:
            object.__setattr__(self, "temperature", DEFAULT_TEMPERATURE[self.template_id])
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def input_text(self) -> str:
        """The request-specific input block appended after the template."""
        parts = []
        for heading, name, required in _INPUT_SECTIONS[self.template_id]:
            if name not in self.bindings:
                if required:
                    raise MissingBindingError(self.template_id, name)
                continue
            parts.append(f"{heading}\n{self.bindings[name]}")
        return "\n\n".join(parts)


def base_prompt(template_id: TemplateId | str, platform: str | None = None) -> str:
    """Template text with the platform placeholder substituted."""
    tid = TemplateId(template_id)
    text = template_text(tid)
    if PLATFORM_PLACEHOLDER in text:
        if platform is None:
            raise MissingBindingError(tid, "platform")
        text = text.replace(PLATFORM_PLACEHOLDER, platform)
    return text


def render_prompt(request: ChatRequest) -> str:
    """Render in-context examples, then the template, then the input block."""
    body = base_prompt(request.template_id, request.bindings.get("platform"))
    inputs = request.input_text()
    examples = []
    for i, ex in enumerate(request.in_context_examples, start=1):
        examples.append(f"Example {i} input:\n{ex.input_text}\n\nExample {i} output:\n{ex.response}\n\n")
    return "".join(examples) + body + "\n" + inputs + "\n"

