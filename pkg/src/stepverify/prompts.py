"""Prompt rendering and answer extraction.

Three templates drive the pipeline: INITIAL (first look at a solution),
SELF_CHECK (an agent re-examines its own previous verdict), and DEBATE
(an agent sees the other agents' reasoning). Templates live in text files
with ${placeholder} fields so deployments can swap wording without code
changes; rendering is pure string work and fully deterministic.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template

from .core import LocationRangeError, StepSolution, Verdict, validate_location


class ParseError(ValueError):
    """Raised when no legal location can be extracted from model output."""


class TemplateKind(Enum):
    INITIAL = "initial"
    SELF_CHECK = "self_check"
    DEBATE = "debate"


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: TemplateKind
    messages: tuple[Message, ...]

    def text(self) -> str:
        """All message contents joined, for audits and token estimates."""
        return "\n\n".join(m.content for m in self.messages)


_REQUIRED_FIELDS = {
    TemplateKind.INITIAL: ("problem", "tagged_steps"),
    TemplateKind.SELF_CHECK: (
        "problem",
        "tagged_steps",
        "previous_location",
        "previous_reasoning",
    ),
    TemplateKind.DEBATE: ("other_solutions",),
}


class PromptTemplates:
    """The three templates, loaded once at startup.

    load() with no argument reads the packaged defaults; pass a directory
    containing initial.txt / self_check.txt / debate.txt to override.
    """

    def __init__(self, initial: str, self_check: str, debate: str) -> None:
        self._templates = {
            TemplateKind.INITIAL: Template(initial),
            TemplateKind.SELF_CHECK: Template(self_check),
            TemplateKind.DEBATE: Template(debate),
        }
        for kind, fields in _REQUIRED_FIELDS.items():
            text = self._templates[kind].template
            for name in fields:
                if "${" + name + "}" not in text:
                    raise ValueError(
                        f"{kind.value} template is missing the ${{{name}}} placeholder"
                    )

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptTemplates":
        if directory is None:
            root = resources.files("stepverify").joinpath("templates")
            read = lambda name: root.joinpath(name).read_text(encoding="utf-8")
        else:
            base = Path(directory)
            read = lambda name: (base / name).read_text(encoding="utf-8")
        return cls(read("initial.txt"), read("self_check.txt"), read("debate.txt"))

    def render(self, kind: TemplateKind, **fields: str) -> str:
        return self._templates[kind].substitute(**fields)


_default_templates: PromptTemplates | None = None


def default_templates() -> PromptTemplates:
    global _default_templates
    if _default_templates is None:
        _default_templates = PromptTemplates.load()
    return _default_templates


def tag_steps(steps: tuple[str, ...] | list[str]) -> str:
    """Wrap each step in an indexed paragraph tag, 0-based."""
    blocks = [
        f"<paragraph_{i}>\n{step}\n</paragraph_{i}>" for i, step in enumerate(steps)
    ]
    return "\n\n".join(blocks)


def render_initial(
    solution: StepSolution, templates: PromptTemplates | None = None
) -> RenderedPrompt:
    tpl = templates or default_templates()
    content = tpl.render(
        TemplateKind.INITIAL,
        problem=solution.problem,
        tagged_steps=tag_steps(solution.steps),
    )
    return RenderedPrompt(TemplateKind.INITIAL, (Message(Role.USER, content),))


def render_self_check(
    solution: StepSolution,
    previous: Verdict,
    templates: PromptTemplates | None = None,
) -> RenderedPrompt:
    """Build the re-examination prompt from the agent's OWN previous verdict.

    Nothing from any other agent may enter here; the caller must pass the
    same agent's verdict from the immediately preceding round.
    """
    if previous.location is None:
        raise ValueError("previous verdict is INVALID; re-issue the initial prompt")
    tpl = templates or default_templates()
    content = tpl.render(
        TemplateKind.SELF_CHECK,
        problem=solution.problem,
        tagged_steps=tag_steps(solution.steps),
        previous_location=str(previous.location),
        previous_reasoning=previous.reasoning,
    )
    return RenderedPrompt(TemplateKind.SELF_CHECK, (Message(Role.USER, content),))


def render_debate(
    solution: StepSolution,
    own_previous: Verdict,
    others: list[Verdict] | tuple[Verdict, ...],
    templates: PromptTemplates | None = None,
) -> RenderedPrompt:
    """Build the round-two debate prompt for one agent.

    The agent's own first answer rides along as an assistant turn; the other
    agents' reasoning appears as "One agent solution:" blocks, one per agent.
    """
    if not others:
        raise ValueError("debate requires at least one other agent's verdict")
    if any(v.location is None for v in others):
        raise ValueError("debate blocks must come from parseable verdicts")
    if any(v.agent_id == own_previous.agent_id for v in others):
        raise ValueError("an agent's own verdict may not appear as another agent's")
    tpl = templates or default_templates()
    initial_content = tpl.render(
        TemplateKind.INITIAL,
        problem=solution.problem,
        tagged_steps=tag_steps(solution.steps),
    )
    blocks = "\n\n".join(f"One agent solution: {v.reasoning}" for v in others)
    debate_content = tpl.render(TemplateKind.DEBATE, other_solutions=blocks)
    return RenderedPrompt(
        TemplateKind.DEBATE,
        (
            Message(Role.USER, initial_content),
            Message(Role.ASSISTANT, own_previous.reasoning),
            Message(Role.USER, debate_content),
        ),
    )


_INT_PATTERN = re.compile(r"^[+-]?\d+$")


def _last_boxed_content(text: str) -> str:
    start = text.rfind("\\boxed{")
    if start < 0:
        raise ParseError("no \\boxed{...} in output")
    depth = 0
    for i in range(start + len("\\boxed"), len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start + len("\\boxed{") : i]
    raise ParseError("unbalanced braces in final \\boxed{...}")


def extract_location(text: str, n_steps: int) -> int:
    """Parse the last \\boxed{...} into a location and range-check it.

    Content must be a bare integer (surrounding whitespace and a leading +
    are tolerated); anything else is a ParseError. Out-of-range integers
    raise LocationRangeError so callers can distinguish the two failures.
    """
    content = _last_boxed_content(text).strip()
    if not _INT_PATTERN.match(content):
        raise ParseError(f"\\boxed content {content!r} is not an integer index")
    return validate_location(int(content), n_steps)
