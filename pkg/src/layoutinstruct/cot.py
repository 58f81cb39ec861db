"""LayoutCoT construction over image, HTML and MRC-table sources.

For each source: build a text representation, obtain QA pairs with a text
chain of thought (from the generation service, or by rule for MRC tables),
locate the relevant sentences among the page segments, and take the union of
their boxes as the relevant-area step. HTML and table sources are also
written out for an external renderer.
"""
from __future__ import annotations

import html as htmllib
import json
import logging
import os
import shlex
import subprocess
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from . import templates
from .core import (
    BBox,
    DocumentRecord,
    InstructionRecord,
    LayoutCoTRecord,
    TextSegment,
    normalize_bbox,
    render_layout_text,
    truncate_document,
    union_bbox,
)
from .ingest import IngestReport, MRCItem, parse_ocr_page
from .llm import Client, GenerationError, GenerationRequest, render_prompt
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

VARIANTS = ("image", "html", "mrc")
MRC_CELL_W = 200
MRC_CELL_H = 60
REQUIRED_KEYS = ("question", "answer", "analysis", "relevant_sentences", "explanation")


@dataclass(frozen=True)
class CorpusSource:
    variant: str
    source_id: str
    payload: Union[str, DocumentRecord, MRCItem]
    sidecar: Optional[DocumentRecord] = None

    def __post_init__(self):
        expected = {"image": DocumentRecord, "html": str, "mrc": MRCItem}
        if self.variant not in expected:
            raise ValueError(f"unknown source variant {self.variant!r}")
        if not isinstance(self.payload, expected[self.variant]):
            raise TypeError(f"{self.variant} source needs a {expected[self.variant].__name__} payload")


@dataclass(frozen=True)
class DocRepresentation:
    kind: str  # "layout_text" | "html"
    body: str
    segments: tuple[TextSegment, ...]
    page_w: int = 1000
    page_h: int = 1000


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str


@dataclass(frozen=True)
class TextCoT:
    step1_analysis: str
    relevant_sentences: tuple[str, ...]
    step3_formation: str

    def __post_init__(self):
        if not self.relevant_sentences:
            raise ValueError("a text CoT needs at least one relevant sentence")


# --- representation -----------------------------------------------------------

def mrc_cell_boxes(item: MRCItem) -> dict[tuple[int, int], BBox]:
    """Boxes of every grid position on the fixed 200x60 px cell template."""
    t = item.table
    page_w, page_h = t.n_cols * MRC_CELL_W, t.n_rows * MRC_CELL_H
    return {
        (r, c): normalize_bbox(
            [(c - 1) * MRC_CELL_W, (r - 1) * MRC_CELL_H, c * MRC_CELL_W, r * MRC_CELL_H],
            page_w, page_h, item.item_id,
        )
        for r in range(1, t.n_rows + 1)
        for c in range(1, t.n_cols + 1)
    }


def render_mrc_html(item: MRCItem) -> str:
    t = item.table
    rows = []
    for r in range(1, t.n_rows + 1):
        tds = []
        for c in range(1, t.n_cols + 1):
            cell = t.cell_at(r, c)
            tds.append(f"<td>{htmllib.escape(cell.text) if cell else ''}</td>")
        rows.append("<tr>" + "".join(tds) + "</tr>")
    style = (
        "body{margin:0}"
        "table{border-collapse:collapse;table-layout:fixed}"
        f"td{{box-sizing:border-box;width:{MRC_CELL_W}px;height:{MRC_CELL_H}px;"
        "padding:2px;border:1px solid #000;overflow:hidden;font:14px sans-serif}"
    )
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<style>{style}</style></head><body><table>\n"
        + "\n".join(rows)
        + "\n</table></body></html>\n"
    )


def represent_document(src: CorpusSource, max_tokens: int = 512) -> DocRepresentation:
    if src.variant == "image":
        doc = truncate_document(src.payload, max_tokens)
        if not doc.segments:
            raise ValueError(f"{src.source_id}: image source has no segments")
        return DocRepresentation("layout_text", render_layout_text(doc.segments), doc.segments,
                                 doc.page_w, doc.page_h)
    if src.variant == "html":
        if not src.payload.strip():
            raise ValueError(f"{src.source_id}: empty html source")
        if src.sidecar is None:
            raise ValueError(f"{src.source_id}: html source has no box-derivation sidecar")
        doc = truncate_document(src.sidecar, max_tokens)
        if not doc.segments:
            raise ValueError(f"{src.source_id}: html sidecar has no segments")
        return DocRepresentation("html", src.payload, doc.segments, doc.page_w, doc.page_h)
    item = src.payload
    boxes = mrc_cell_boxes(item)
    segs = tuple(
        TextSegment(c.text, boxes[(c.row, c.col)])
        for c in sorted(item.table.cells, key=lambda c: (c.row, c.col))
        if c.text
    )
    if not segs:
        raise ValueError(f"{src.source_id}: empty table")
    return DocRepresentation("html", render_mrc_html(item), segs,
                             item.table.n_cols * MRC_CELL_W, item.table.n_rows * MRC_CELL_H)


# --- QA & text CoT ------------------------------------------------------------

def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text


def parse_qa_cot_response(text: str, stats: Optional[Counter] = None) -> Optional[list]:
    """Parse the service reply; None if it is not a JSON array at all."""
    stats = stats if stats is not None else Counter()
    body = _strip_fences(text)
    start, end = body.find("["), body.rfind("]")
    if start < 0 or end < start:
        return None
    try:
        items = json.loads(body[start:end + 1])
    except ValueError:
        return None
    if not isinstance(items, list):
        return None
    out = []
    for obj in items:
        ok = isinstance(obj, dict) and all(k in obj for k in REQUIRED_KEYS)
        if ok:
            sents = obj["relevant_sentences"]
            ok = (
                all(isinstance(obj[k], str) and obj[k].strip()
                    for k in ("question", "answer", "analysis", "explanation"))
                and isinstance(sents, list) and sents
                and all(isinstance(s, str) and s.strip() for s in sents)
            )
        if not ok:
            stats["malformed_pair"] += 1
            continue
        out.append((
            QAPair(obj["question"].strip(), obj["answer"].strip()),
            TextCoT(obj["analysis"], tuple(obj["relevant_sentences"]), obj["explanation"]),
        ))
    return out


def generate_qa_cot(rep: DocRepresentation, client: Client,
                    stats: Optional[Counter] = None) -> list[tuple[QAPair, TextCoT]]:
    """Ask the service for QA pairs with text CoT; one reprompt on a bad parse."""
    stats = stats if stats is not None else Counter()
    prompt = render_prompt("qa_cot", {"document": rep.body})
    for attempt in (prompt, render_prompt("reprompt", {"prompt": prompt})):
        try:
            reply = client.complete(GenerationRequest(attempt, tag="qa_cot"))
        except GenerationError as exc:
            log.warning("qa_cot generation failed: %s", exc)
            stats["client_error"] += 1
            return []
        parsed = parse_qa_cot_response(reply, stats)
        if parsed is not None:
            return parsed
    stats["unparseable"] += 1
    return []


def reuse_mrc_qa(item: MRCItem) -> tuple[QAPair, TextCoT]:
    """Rule-based text CoT from an MRC item's answer and highlighted cells."""
    cells = [item.table.cell_at(r, c) for r, c in item.highlighted_cells]
    sentences = tuple(c.text for c in cells if c.text) or tuple(
        f"row {c.row}, column {c.col}" for c in cells
    )
    where = f' of "{item.title}"' if item.title else ""
    step1 = (
        f"This is a Table question. It asks: {item.question} "
        f"The answer has to be read from the cells of the table{where}."
    )
    listed = "; ".join(f'"{c.text}" (row {c.row}, column {c.col})' for c in cells)
    step3 = f"The relevant cells are {listed}. Combining them, the answer is: {item.answer}"
    return QAPair(item.question, item.answer), TextCoT(step1, sentences, step3)


# --- sentence matching --------------------------------------------------------

def _strip_punct(token: str) -> str:
    i, j = 0, len(token)
    while i < j and unicodedata.category(token[i]).startswith("P"):
        i += 1
    while j > i and unicodedata.category(token[j - 1]).startswith("P"):
        j -= 1
    return token[i:j]


def normalize_tokens(text: str) -> tuple[str, ...]:
    return tuple(t for t in (_strip_punct(w) for w in text.casefold().split()) if t)


def _contains(seq: tuple, sub: tuple) -> bool:
    n = len(sub)
    return any(seq[i:i + n] == sub for i in range(len(seq) - n + 1))


def sentence_matches(sentence: str, segment_text: str) -> bool:
    a, b = normalize_tokens(sentence), normalize_tokens(segment_text)
    if not a or not b:
        return False
    return _contains(a, b) or _contains(b, a)


def match_relevant_sentences(tc: TextCoT, segments) -> list[TextSegment]:
    """Segments backing the CoT's relevant sentences, in page order.

    Returns an empty list when any sentence matches nothing; the QA pair is
    then discarded.
    """
    segments = list(segments)
    hit: set[int] = set()
    for sentence in tc.relevant_sentences:
        found = [i for i, s in enumerate(segments) if sentence_matches(sentence, s.text)]
        if not found:
            return []
        hit.update(found)
    return [segments[i] for i in sorted(hit)]


def build_layout_cot(tc: TextCoT, matched) -> LayoutCoTRecord:
    boxes = [s.box for s in matched]
    return LayoutCoTRecord(tc.step1_analysis, union_bbox(boxes), tc.step3_formation)


# --- per-source driver --------------------------------------------------------

def image_path_for(src: CorpusSource) -> Optional[str]:
    if src.variant == "image":
        return src.payload.image_ref
    return f"images/{src.source_id}.png"


def build_cot_records(src: CorpusSource, client: Optional[Client], global_seed: int,
                      stats: Optional[Counter] = None, max_tokens: int = 512
                      ) -> list[InstructionRecord]:
    """Run the whole construction for one source."""
    stats = stats if stats is not None else Counter()
    try:
        rep = represent_document(src, max_tokens)
    except ValueError as exc:
        log.warning("cot: %s", exc)
        stats["rejected_source"] += 1
        return []
    if src.variant == "mrc":
        item = src.payload
        boxes = mrc_cell_boxes(item)
        qa, tc = reuse_mrc_qa(item)
        highlighted = [TextSegment(item.table.cell_at(r, c).text, boxes[(r, c)])
                       for r, c in item.highlighted_cells if item.table.cell_at(r, c).text]
        if not highlighted:
            log.warning("cot: %s highlights only empty cells", src.source_id)
            stats["rejected_source"] += 1
            return []
        pairs = [(qa, tc, highlighted)]
    else:
        if client is None:
            raise ValueError("a generation client is required for image and html sources")
        pairs = []
        for qa, tc in generate_qa_cot(rep, client, stats):
            matched = match_relevant_sentences(tc, rep.segments)
            if not matched:
                stats["discarded_pair"] += 1
                continue
            pairs.append((qa, tc, matched))
        if not pairs:
            stats["empty_source"] += 1

    seed = derive_seed(global_seed, src.source_id, "cot_qa")
    out = []
    for i, (qa, tc, matched) in enumerate(pairs):
        out.append(InstructionRecord(
            id=f"cot_qa/{src.source_id}/{i}",
            task="cot_qa",
            doc_id=src.source_id,
            question=qa.question,
            answer=qa.answer,
            input_segments=rep.segments,
            cot=build_layout_cot(tc, matched),
            seed=seed,
            source=src.variant,
            image_ref=image_path_for(src),
        ))
    stats[f"records_{src.variant}"] += len(out)
    return out


# --- sources and rendering ----------------------------------------------------

def load_html_sources(path, report: Optional[IngestReport] = None) -> list[CorpusSource]:
    """``*.html`` files, each with a same-stem ``*.json`` box sidecar (OCR page schema)."""
    report = report if report is not None else IngestReport()
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory not found: {root}")
    out = []
    for p in sorted(root.glob("*.html")):
        report.records_in += 1
        side = p.with_suffix(".json")
        if not side.exists():
            report.skip(p.name, "missing box-derivation sidecar")
            continue
        try:
            with open(side, encoding="utf-8") as fh:
                sidecar = parse_ocr_page(json.load(fh), p.stem, report, source="html")
            out.append(CorpusSource("html", p.stem, p.read_text(encoding="utf-8"), sidecar))
            report.records_out += 1
        except (ValueError, KeyError, TypeError) as exc:
            report.skip(p.name, str(exc))
    return out


def html_generation_prompt(seed: int, caption: str, image: str) -> str:
    """Prompt for free HTML generation with a seeded document type."""
    doc_type = rng_for(seed).choice(templates.load_lines("doc_types"))
    return render_prompt("html_gen", {"doc_type": doc_type, "caption": caption, "image": image})


MANIFEST_NAME = "render_manifest.jsonl"


def emit_render_manifest(sources, out_dir, renderer_cmd: Optional[str] = None,
                         stats: Optional[Counter] = None, timeout: float = 120.0) -> Path:
    """Write HTML bodies and a manifest line per HTML/MRC source.

    ``renderer_cmd`` is a command template with ``{html}`` and ``{out}``
    placeholders, run once per source. Without one every line is
    ``pending``. Paths in the manifest are relative to ``out_dir``.
    """
    stats = stats if stats is not None else Counter()
    out_dir = Path(out_dir)
    (out_dir / "html").mkdir(parents=True, exist_ok=True)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for src in sorted((s for s in sources if s.variant in ("html", "mrc")),
                      key=lambda s: s.source_id):
        html_rel = f"html/{src.source_id}.html"
        img_rel = image_path_for(src)
        entry = {"doc_id": src.source_id, "html_path": html_rel, "image_path": img_rel}
        try:
            rep = represent_document(src)
            entry["page_w"], entry["page_h"] = rep.page_w, rep.page_h
            (out_dir / html_rel).write_text(rep.body, encoding="utf-8")
        except (OSError, ValueError) as exc:
            log.warning("render manifest: cannot write %s: %s", src.source_id, exc)
            stats["write_failed"] += 1
            entry["status"] = "write_failed"
            lines.append(entry)
            continue
        if renderer_cmd:
            args = [
                a.replace("{html}", str(out_dir / html_rel)).replace("{out}", str(out_dir / img_rel))
                for a in shlex.split(renderer_cmd)
            ]
            try:
                proc = subprocess.run(args, capture_output=True, timeout=timeout)
                ok = proc.returncode == 0
            except (OSError, subprocess.TimeoutExpired) as exc:
                log.warning("renderer failed on %s: %s", src.source_id, exc)
                ok = False
            entry["status"] = "done" if ok else "failed"
            stats["rendered" if ok else "render_failed"] += 1
        else:
            entry["status"] = "pending"
            stats["render_pending"] += 1
        lines.append(entry)

    path = out_dir / MANIFEST_NAME
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for entry in lines:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
    os.replace(tmp, path)
    return path
