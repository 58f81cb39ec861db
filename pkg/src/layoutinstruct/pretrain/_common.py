from __future__ import annotations

import random

from .. import templates
from ..core import DocumentRecord, InstructionRecord, TextSegment


def record_id(task: str, doc_id: str, suffix: object = None) -> str:
    return f"{task}/{doc_id}" if suffix is None else f"{task}/{doc_id}/{suffix}"


def pick_question(rng: random.Random, template_name: str, **bindings) -> str:
    return templates.fill(rng.choice(templates.load_lines(template_name)), bindings)


def make_record(task: str, doc: DocumentRecord, question: str, answer: str, seed: int,
                segments=None, suffix: object = None) -> InstructionRecord:
    segs: tuple[TextSegment, ...] = tuple(doc.segments if segments is None else segments)
    return InstructionRecord(
        id=record_id(task, doc.doc_id, suffix),
        task=task,
        doc_id=doc.doc_id,
        question=question,
        answer=answer,
        input_segments=segs,
        seed=seed,
        source=doc.source,
        image_ref=doc.image_ref,
    )
