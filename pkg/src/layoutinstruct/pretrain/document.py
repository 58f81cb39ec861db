"""Document-level tasks: dense description (DDD) and text/layout reconstruction (TLR)."""
from __future__ import annotations

import json
import logging
from typing import Optional

from ..core import (
    BBox,
    DocumentRecord,
    InstructionRecord,
    TextSegment,
    parse_segment,
    reading_order_sort,
    render_layout_text,
    serialize_segment,
)
from ..llm import Client, GenerationError, GenerationRequest, render_prompt
from ..seeding import rng_for
from ._common import make_record, pick_question

log = logging.getLogger(__name__)

TLR_FORMATS = ("angle", "structured", "markdown")
_FORMAT_NAMES = {
    "angle": "<[x1,y1,x2,y2], text>",
    "structured": "JSON",
    "markdown": "Markdown",
}
DDD_WORD_CAP = 500


def build_ddd(doc: DocumentRecord, client: Client, seed: int) -> Optional[InstructionRecord]:
    """Dense description of the page, written by the generation service.

    Returns None (and logs) when the document has no text or the service
    fails; callers count those as skipped.
    """
    if not doc.segments:
        log.info("ddd: %s has no segments, skipped", doc.doc_id)
        return None
    rng = rng_for(seed)
    question = pick_question(rng, "ddd_questions")
    prompt = render_prompt("ddd", {"document": render_layout_text(doc.segments)})
    try:
        answer = client.complete(
            GenerationRequest(prompt, max_words_hint=DDD_WORD_CAP, tag="ddd")
        ).strip()
    except GenerationError as exc:
        log.warning("ddd: generation failed for %s: %s", doc.doc_id, exc)
        return None
    if not answer:
        log.warning("ddd: empty description for %s", doc.doc_id)
        return None
    return make_record("ddd", doc, question, answer, seed)


# --- TLR answer formats -------------------------------------------------------

_MD_ESCAPES = {"\\": "\\\\", "|": "\\|", "\n": "\\n"}
_MD_UNESCAPES = {"\\": "\\", "|": "|", "n": "\n"}
_MD_HEADER = "| box | text |\n| --- | --- |"


def _md_escape(text: str) -> str:
    return "".join(_MD_ESCAPES.get(ch, ch) for ch in text)


def _md_unescape(text: str) -> str:
    out, it = [], iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, None)
            if nxt not in _MD_UNESCAPES:
                raise ValueError(f"bad markdown escape in {text!r}")
            out.append(_MD_UNESCAPES[nxt])
        else:
            out.append(ch)
    return "".join(out)


def render_tlr_answer(segments, fmt: str) -> str:
    if fmt == "angle":
        return "\n".join(serialize_segment(s) for s in segments)
    if fmt == "structured":
        return json.dumps(
            [{"box": s.box.as_list(), "text": s.text} for s in segments], ensure_ascii=False
        )
    if fmt == "markdown":
        rows = [f"| {s.box} | {_md_escape(s.text)} |" for s in segments]
        return "\n".join([_MD_HEADER, *rows])
    raise ValueError(f"unknown TLR format {fmt!r}")


def parse_tlr_answer(answer: str, fmt: str) -> list[TextSegment]:
    if fmt == "angle":
        return [parse_segment(line) for line in answer.split("\n") if line]
    if fmt == "structured":
        items = json.loads(answer)
        out = []
        for it in items:
            if set(it) != {"box", "text"}:
                raise ValueError(f"unexpected fields {sorted(it)}")
            out.append(TextSegment(it["text"], BBox.from_list(it["box"])))
        return out
    if fmt == "markdown":
        lines = answer.split("\n")
        if "\n".join(lines[:2]) != _MD_HEADER:
            raise ValueError("missing markdown table header")
        out = []
        for line in lines[2:]:
            if not (line.startswith("| [") and line.endswith(" |")):
                raise ValueError(f"bad markdown row {line!r}")
            cut = line.index("] | ")
            box = BBox.from_list(json.loads(line[2:cut + 1]))
            out.append(TextSegment(_md_unescape(line[cut + 4:-2]), box))
        return out
    raise ValueError(f"unknown TLR format {fmt!r}")


def build_tlr(doc: DocumentRecord, fmt: str, seed: int) -> InstructionRecord:
    """Reconstruct every segment, in reading order, in the requested format."""
    if fmt not in TLR_FORMATS:
        raise ValueError(f"unknown TLR format {fmt!r}")
    if not doc.segments:
        raise ValueError(f"tlr: {doc.doc_id} has no segments")
    rng = rng_for(seed)
    question = pick_question(rng, "tlr_questions", format_name=_FORMAT_NAMES[fmt])
    answer = render_tlr_answer(reading_order_sort(doc.segments), fmt)
    return make_record("tlr", doc, question, answer, seed, suffix=fmt)
