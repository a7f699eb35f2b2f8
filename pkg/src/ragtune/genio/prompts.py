"""Instruction prompt templates with a numbered paragraph block."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..corpus import Document, Query

PREAMBLE = (
    "Below is an instruction that describes a task. "
    "Write a response that appropriately completes the request."
)
FACTCHECK_INSTRUCTION = (
    "Is the following statement correct or not? Say true if it's correct; otherwise say false."
)

PARAGRAPH_HEADER = "### Paragraph:"
INSTRUCTION_HEADER = "### Instruction:"
INPUT_HEADER = "### Input:"
RESPONSE_HEADER = "### Response:"

_NUMBER_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven", 8: "eight"}


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    skeleton: str
    preamble: bool
    instruction: str | None  # None: the question itself is the instruction
    with_input: bool

    def render_instruction(self, query: Query) -> str:
        if self.instruction is None:
            return query.question
        return self.instruction.format(**_choice_fields(query))


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    doc_ids: tuple[str, ...]
    template_id: str


def _choice_fields(query: Query) -> dict:
    labels = list(query.labels)
    if len(labels) >= 2:
        listed = ", ".join(labels[:-1]) + " and " + labels[-1]
    else:
        listed = "".join(labels)
    return {"n_choices": _NUMBER_WORDS.get(len(labels), str(len(labels))), "labels": listed}


TEMPLATES: dict[str, PromptTemplate] = {
    "openqa": PromptTemplate(
        "openqa", "{paragraphs}{instruction}{response}", preamble=False, instruction=None, with_input=False
    ),
    "factcheck": PromptTemplate(
        "factcheck", "{preamble}{paragraphs}{instruction}{input}{response}",
        preamble=True, instruction=FACTCHECK_INSTRUCTION, with_input=True,
    ),
    "choice": PromptTemplate(
        "choice", "{preamble}{paragraphs}{instruction}{input}{response}",
        preamble=True,
        instruction="Given {n_choices} answer candidates, {labels}, choose the best answer choice.",
        with_input=True,
    ),
}


def template_for(query: Query) -> PromptTemplate:
    if query.template:
        try:
            return TEMPLATES[query.template]
        except KeyError:
            raise ValueError(f"unknown prompt template {query.template!r}") from None
    if query.task_kind == "freeform":
        return TEMPLATES["openqa"]
    if {lab.lower() for lab in query.labels} == {"true", "false"}:
        return TEMPLATES["factcheck"]
    return TEMPLATES["choice"]


def _input_block(query: Query, template: PromptTemplate) -> str:
    if template.template_id == "factcheck" or query.task_kind == "freeform":
        return query.question
    lines = [query.question] + [f"{lab}: {text}" for lab, text in query.choices]
    return "\n".join(lines)


def render_prompt(
    template: PromptTemplate | str | None, query: Query, docs: Sequence[Document]
) -> RenderedPrompt:
    """Lay out the prompt; an empty ``docs`` drops the paragraph block.

    Blocks are separated by one blank line and the text ends right after
    the response header, where the continuation is appended.
    """
    if template is None:
        template = template_for(query)
    elif isinstance(template, str):
        template = TEMPLATES[template]
    parts = {
        "preamble": PREAMBLE + "\n\n" if template.preamble else "",
        "paragraphs": "",
        "instruction": f"{INSTRUCTION_HEADER}\n{template.render_instruction(query)}\n\n",
        "input": f"{INPUT_HEADER}\n{_input_block(query, template)}\n\n" if template.with_input else "",
        "response": f"{RESPONSE_HEADER}\n",
    }
    if docs:
        entries = [f"[{i}] {d.title}\n{d.body}" for i, d in enumerate(docs, 1)]
        parts["paragraphs"] = PARAGRAPH_HEADER + "\n" + "\n".join(entries) + "\n\n"
    text = template.skeleton.format(**parts)
    return RenderedPrompt(text, tuple(d.doc_id for d in docs), template.template_id)


def split_sections(prompt: str) -> dict[str, str]:
    """Inverse of the layout: header name -> section body.

    Only recognizes headers at line starts; used by the mock generator to
    read back what it was shown.
    """
    sections: dict[str, list[str]] = {}
    current = "preamble"
    headers = {
        PARAGRAPH_HEADER: "paragraph", INSTRUCTION_HEADER: "instruction",
        INPUT_HEADER: "input", RESPONSE_HEADER: "response",
    }
    for line in prompt.split("\n"):
        key = headers.get(line.rstrip())
        if key is not None:
            current = key
            sections.setdefault(current, [])
            continue
        sections.setdefault(current, []).append(line)
    return {k: "\n".join(v) for k, v in sections.items()}
