"""Edge-discrimination prompt template.

The prompt has four parts: a background paragraph that lists every class
name of the graph, the task statement, the two node texts, and an answer
template that restricts the reply to Yes/No. The template text is versioned;
its hash keys the verdict cache so that editing the wording invalidates
stale verdicts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from hetg.errors import ValidationError
from hetg.graph import TextGraph

TEMPLATE_VERSION = "edge-disc-v1"
EMPTY_TEXT = "(no text)"


@dataclass(frozen=True)
class PromptTemplate:
    background: str = (
        "Background: I have a graph dataset in which every node is a text document "
        "and edges link related documents. {domain}Each node has been manually "
        "assigned to one of {n_classes} categories: {class_list}."
    )
    task: str = (
        "Task: I will give you the text of two nodes. Decide whether the two nodes "
        "belong to the same category."
    )
    input: str = "Node 1: {text_u}\nNode 2: {text_v}"
    answer: str = (
        "Answer with \"Yes\" if both nodes belong to the same category and \"No\" "
        "otherwise. Do not output anything else.\nAnswer:"
    )
    domain: str = ""
    max_chars: int = 1024
    version: str = TEMPLATE_VERSION

    @property
    def hash(self) -> str:
        payload = json.dumps(
            [self.version, self.background, self.task, self.input, self.answer, self.domain, self.max_chars]
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class PromptInstance:
    background: str
    task: str
    input: str
    answer_template: str

    @property
    def rendered(self) -> str:
        return "\n\n".join([self.background, self.task, self.input, self.answer_template])


def _clip(text: str, limit: int) -> str:
    text = text.strip()
    if not text:
        return EMPTY_TEXT
    return text[:limit]


def render_prompt(graph: TextGraph, u, v, template: PromptTemplate = PromptTemplate()) -> PromptInstance:
    """Fill the template for pair ``(u, v)``; the lower id's text comes first."""
    if u == v:
        raise ValidationError("cannot render a prompt for a node paired with itself")
    for x in (u, v):
        if not 0 <= x < graph.num_nodes:
            raise ValidationError(f"unknown node {x}")
    u, v = min(u, v), max(u, v)
    domain = template.domain.strip()
    background = template.background.format(
        domain=domain + " " if domain else "",
        n_classes=len(graph.classes),
        class_list=", ".join(graph.classes),
    )
    body = template.input.format(
        text_u=_clip(graph.texts[u], template.max_chars),
        text_v=_clip(graph.texts[v], template.max_chars),
    )
    return PromptInstance(background, template.task, body, template.answer)


def export_finetune(graph: TextGraph, records, path, template: PromptTemplate = PromptTemplate()):
    """Write prompt/completion JSON Lines for external LoRA fine-tuning."""
    from hetg.pairs import Relation

    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            prompt = render_prompt(graph, r.u, r.v, template).rendered
            completion = "Yes" if r.relation is Relation.HOMO else "No"
            fh.write(json.dumps({"prompt": prompt, "completion": completion}, ensure_ascii=False) + "\n")
