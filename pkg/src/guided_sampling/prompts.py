"""Prompt templates for exploration, generation, and concept tagging.

Templates are plain strings with double-brace slots: {{question}},
{{options}}, {{existing_concepts}}, {{concept}}. Per-domain defaults ship
below; any of them can be overridden from files via load_template_overrides.

The exploration and tagging prompts are load-bearing: the sentinel line and
the tagger's output format are matched verbatim downstream, so edit them with
care. The generation and direct templates are plain defaults meant to be
swapped out per domain.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import TemplateError

# The early-stop response exploration watches for.
SENTINEL = "No additional concepts found."

_WS = re.compile(r"\s+")


def sentinel_matches(text: str) -> bool:
    """True when a response is the early-stop sentinel (or contains it).

    Case-insensitive, whitespace-collapsed substring test, so punctuation or
    spacing quirks around the phrase still halt the loop.
    """
    squashed = _WS.sub(" ", text).strip().casefold()
    return "no additional concepts found" in squashed


_SLOT = re.compile(r"\{\{(\w+)\}\}")


def render_template(template: str, slots: Mapping[str, str]) -> str:
    """Fill {{name}} slots; unknown slot names in the template are an error."""

    def swap(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots:
            raise TemplateError(f"template slot {{{{{name}}}}} has no value")
        return slots[name]

    return _SLOT.sub(swap, template)


def format_options(options: Optional[Sequence[str]]) -> str:
    """Render answer choices as an OPTIONS block, or nothing at all.

    Returns a string that can sit directly after the question text, which is
    why it carries its own leading blank line when options are present.
    """
    if not options:
        return ""
    lines = [f"{chr(ord('A') + i)}) {opt}" for i, opt in enumerate(options)]
    return "\n\nOPTIONS:\n" + "\n".join(lines)


def format_existing_concepts(concepts: Sequence[str]) -> str:
    """Render already-found concepts, one bulleted line each."""
    return "\n".join(f"- {c}" for c in concepts)


@dataclass(frozen=True)
class PromptTemplates:
    """The four prompt shapes a run needs for one question domain."""

    initial: str  # first exploration call
    subsequent: str  # later exploration calls; sees {{existing_concepts}}
    generation: str  # concept-conditioned solution sampling
    direct: str  # plain repeated sampling

    def render_initial(self, question: str, options: str = "") -> str:
        return render_template(self.initial, {"question": question, "options": options})

    def render_subsequent(self, question: str, existing: str, options: str = "") -> str:
        return render_template(
            self.subsequent,
            {"question": question, "existing_concepts": existing, "options": options},
        )

    def render_generation(self, question: str, concept: str, options: str = "") -> str:
        return render_template(
            self.generation,
            {"question": question, "concept": concept, "options": options},
        )

    def render_direct(self, question: str, options: str = "") -> str:
        return render_template(self.direct, {"question": question, "options": options})


_MATH_INITIAL = """\
You are an expert mathematician. You will be presented with a mathematical question and your task is to identify and state one single, specific theorem or fundamental concept that is most relevant and useful for solving the problem.

QUESTION:
{{question}}

Provide only the name of the theorem or concept, or a concise statement of the principle, that is most directly applicable to solving this problem. Do not attempt to solve the original problem. Only provide the theorem or concept."""

_MATH_SUBSEQUENT = """\
You are an expert mathematician. You will be presented with a mathematical question and a list of theorems and concepts that have already been proposed as potentially useful for solving the problem. Your task is to provide a *new* and *different* theorem or concept that is most relevant and useful for solving the problem.

QUESTION:
{{question}}

EXISTING CONCEPTS:
{{existing_concepts}}

Provide only the name of the theorem or concept, or a concise statement of the principle, that is most directly applicable to solving this problem. Do not attempt to solve the original problem. Only provide the theorem or concept. If no new, distinct, and useful theorem or concept can be identified, respond with "No additional concepts found." """

_SCIENCE_INITIAL = """\
You are an expert scientist and problem solver. You will be presented with a complex, graduate-level science question and your task is to identify and state one single, specific theorem or fundamental concept that is most relevant and useful for solving the problem.

QUESTION:
{{question}}{{options}}

Provide only the name of the theorem or concept, or a concise statement of the principle, that is most directly applicable to solving this problem. Do not attempt to solve the original problem. Only provide the theorem or concept."""

_SCIENCE_SUBSEQUENT = """\
You are an expert scientist and problem solver. You will be presented with a complex, graduate-level science question and a list of theorems and concepts that have already been proposed as potentially useful for solving the problem. Your task is to provide a *new* and *different* theorem or concept that is most relevant and useful for solving the problem.

QUESTION:
{{question}}{{options}}

EXISTING CONCEPTS:
{{existing_concepts}}

Provide only the name of the theorem or concept, or a concise statement of the principle, that is most directly applicable to solving this problem. Do not attempt to solve the original problem. Only provide the theorem or concept. If no new, distinct, and useful theorem or concept can be identified, respond with "No additional concepts found." """

_CODE_INITIAL = """\
You are an expert python programmer. You will be presented with a programming question and your task is to identify and state one single, specific concept that is most relevant and useful for solving the problem.

QUESTION:
{{question}}

Provide only the name or short description of the concept, that is most directly applicable to solving this problem. Do not attempt to solve the original question. Only provide the concept."""

_CODE_SUBSEQUENT = """\
You are an expert python programmer. You will be presented with a programming question and a list of concepts that have already been proposed as potentially useful for solving the question. Your task is to provide a *new* and *different* concept that is most relevant and useful for solving the question.

QUESTION:
{{question}}

EXISTING CONCEPTS:
{{existing_concepts}}

Provide only the name or the short description of the concept, that is most directly applicable to solving this problem. Do not attempt to solve the original question. Only provide the concept. If no new, distinct, and useful concept can be identified, respond with "No additional concepts found." """

_FREE_INITIAL = """\
You are an expert scientist. You will be presented with a question and your task is to identify and state one single, specific theorem or concept that is most relevant and useful for solving the problem.

QUESTION:
{{question}}

Provide only the name of the theorem or concept that is most directly applicable to solving this problem. Do not attempt to solve the original problem. Only provide a single theorem or concept."""

_FREE_SUBSEQUENT = """\
You are an expert scientist. You will be presented with a question and a list of theorems and concepts that have already been proposed as potentially useful for solving the problem. Your task is to provide a single **new** and **different** theorem or concept that is most relevant and useful for solving the problem. Do not elaborate on the theorem or concept. If no new, distinct, and useful theorem or concept can be identified, respond with "No additional concepts found."

QUESTION:
{{question}}

EXISTING CONCEPTS:
{{existing_concepts}}

Provide only the name of a single new and different theorem or concept that is most directly applicable to solving this problem. Do not attempt to solve the original problem. If no new, distinct, and useful theorem or concept can be identified, respond with "No additional concepts found." """

# Plain default; override via [templates] when a domain needs custom wording.
_GENERATION = """\
{{question}}{{options}}

Use the following concept to solve the problem: {{concept}}"""

_DIRECT = "{{question}}{{options}}"


DEFAULT_TEMPLATES: dict[str, PromptTemplates] = {
    "math": PromptTemplates(_MATH_INITIAL, _MATH_SUBSEQUENT, _GENERATION, _DIRECT),
    "mcq": PromptTemplates(_SCIENCE_INITIAL, _SCIENCE_SUBSEQUENT, _GENERATION, _DIRECT),
    "code": PromptTemplates(_CODE_INITIAL, _CODE_SUBSEQUENT, _GENERATION, _DIRECT),
    "free": PromptTemplates(_FREE_INITIAL, _FREE_SUBSEQUENT, _GENERATION, _DIRECT),
}


def templates_for(domain_kind: str) -> PromptTemplates:
    try:
        return DEFAULT_TEMPLATES[domain_kind]
    except KeyError:
        raise TemplateError(f"no templates for domain kind {domain_kind!r}") from None


def load_template_overrides(
    base: Mapping[str, PromptTemplates], overrides: Mapping[str, Mapping[str, str]]
) -> dict[str, PromptTemplates]:
    """Replace template texts with file contents.

    overrides maps domain kind -> {slot name -> file path} where slot name is
    one of initial/subsequent/generation/direct.
    """
    result = dict(base)
    for domain, slots in overrides.items():
        if domain not in result:
            raise TemplateError(f"no templates for domain kind {domain!r}")
        fields = {}
        for slot, path in slots.items():
            if slot not in ("initial", "subsequent", "generation", "direct"):
                raise TemplateError(f"unknown template slot {slot!r}")
            fields[slot] = Path(path).read_text(encoding="utf-8")
        result[domain] = replace(result[domain], **fields)
    return result


# System prompt for the concept-tagging judge. The judge reads one worked
# solution (sent as the user message) and answers with a single concept name.
CONCEPT_TAGGER = """\
You are ConceptTagger, an expert that maps a worked-out solution (chain-of-thought or final answer) to the most specific mathematical or logical concept that makes the solution possible.

Task: For every input consisting of a reasoning explanation (a step-by-step solution, scratch-work, or short justification):
1. Read the explanation.
2. Decide which single mathematical concept, theorem, or canonical formula is essential for the solution.
3. Output that concept's standard name, nothing else.

Choose the narrowest concept that still covers the whole solution.
 - Good: "Pythagorean Theorem" (precise).
 - Bad: "Geometry" (too broad).
If two or more concepts appear, pick the one without which the problem cannot be solved (typically the first pivotal step).

Here are two examples:

### Example 1
Problem: A right triangle has legs of lengths 5 cm and 12 cm. What is the length of the hypotenuse?
Step-by-step solution:
Step 1: Recognize this is a right triangle, so apply the Pythagorean Theorem.
Step 2: hypotenuse = sqrt(5^2 + 12^2) = sqrt(25 + 144) = sqrt(169) = 13 cm
Concept Used: Pythagorean Theorem

### Example 2
Problem: What is the area of a rectangle with a length of 9 meters and width of 4 meters?
Step-by-step solution:
Step 1: Identify the shape as a rectangle.
Step 2: Use the area formula: Area = length x width = 9 x 4 = 36 m^2
Concept Used: Area of Rectangle

Formatting Rules:
Output exactly one line with the concept name.
Use Title Case and the singular form (e.g., "Least Common Multiple", not "LCMs").
No extra punctuation, explanation, or line breaks."""
