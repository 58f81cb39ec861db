"""Adapters from public annotation formats to :class:`DocumentRecord`.

Supported inputs (all UTF-8 JSON):

* OCR pages: a directory of ``*.json`` files, one page each::

      {"doc_id": str, "page_w": int, "page_h": int, "image": str?,
       "segments": [{"text": str, "box": [x1, y1, x2, y2]}]}

  Boxes are pixels. The record's ``doc_id`` is the file stem.
* Layout regions: one COCO-style file (PubLayNet / DocLayNet)::

      {"images": [{"id", "file_name", "width", "height"}],
       "annotations": [{"image_id", "category_id", "bbox": [x, y, w, h]}],
       "categories": [{"id", "name"}]}

* Tables: PubTabNet-style JSONL, one table per line::

      {"filename": str, "width": int?, "height": int?,
       "html": {"structure": {"tokens": [...]},
                "cells": [{"tokens": [...], "bbox": [x1, y1, x2, y2]?}]}}

* VIE, linking variant (FUNSD-style), one file per page::

      {"page_w", "page_h", "image"?,
       "form": [{"id", "text", "box", "label", "linking": [[key_id, value_id]]}]}

* VIE, entity variant (SROIE / CORD-style), one file per page::

      {"page_w", "page_h", "image"?, "segments": [{"text", "box"}],
       "entities": [{"type", "text"}] | {"type": "text"}}

* MRC tables: FeTaQA-style JSONL::

      {"feta_id", "table_array": [[str]], "highlighted_cell_ids": [[row, col]],
       "question", "answer", "table_page_title"?}

  ``highlighted_cell_ids`` are 0-based as in FeTaQA; they are stored 1-based.
"""
from __future__ import annotations

import html
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

from .core import (
    BBox,
    DocumentRecord,
    InvalidBoxError,
    LayoutRegion,
    TableAnnotation,
    TableCell,
    TextSegment,
    normalize_bbox,
    reading_order_sort,
)

log = logging.getLogger(__name__)


class IngestError(ValueError):
    pass


@dataclass
class IngestReport:
    """Per-run counts; ``records_out + records_skipped == records_in``."""

    records_in: int = 0
    records_out: int = 0
    records_skipped: int = 0
    warnings: Counter = field(default_factory=Counter)
    errors: list = field(default_factory=list)

    def skip(self, where: str, reason: str) -> None:
        self.records_skipped += 1
        self.errors.append(f"{where}: {reason}")
        log.warning("skipping %s: %s", where, reason)

    def warn(self, kind: str, n: int = 1) -> None:
        self.warnings[kind] += n


@dataclass(frozen=True)
class VIEEntity:
    etype: str
    text: str
    entity_id: Optional[int] = None
    box: Optional[BBox] = None


@dataclass(frozen=True)
class VIELink:
    key: VIEEntity
    value_ids: tuple[int, ...]


@dataclass(frozen=True)
class VIEAnnotation:
    variant: str  # "linking" | "entity"
    links: tuple[VIELink, ...] = ()
    entities: tuple[VIEEntity, ...] = ()

    def __post_init__(self):
        if self.variant not in ("linking", "entity"):
            raise ValueError(f"unknown VIE variant {self.variant!r}")
        ids = [e.entity_id for e in self.entities if e.entity_id is not None]
        if len(ids) != len(set(ids)):
            raise ValueError("entity ids must be unique")

    def entity(self, entity_id: int) -> VIEEntity:
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        raise KeyError(entity_id)


@dataclass(frozen=True)
class MRCItem:
    item_id: str
    table: TableAnnotation
    question: str
    answer: str
    highlighted_cells: tuple[tuple[int, int], ...]
    title: str = ""

    def __post_init__(self):
        for r, c in self.highlighted_cells:
            if self.table.cell_at(r, c) is None:
                raise ValueError(f"{self.item_id}: highlighted cell ({r},{c}) not in table")


# --- helpers ------------------------------------------------------------------

def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


def _page_files(path) -> list[Path]:
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory not found: {root}")
    return sorted(root.glob("*.json"))


def _map_files(files: list[Path], parse: Callable, report: IngestReport, workers: int) -> list:
    """Parse files (maybe in parallel); results keep sorted file order."""

    def run(p: Path):
        local = IngestReport()
        try:
            return p, parse(p, local), None, local
        except (ValueError, KeyError, TypeError, OSError) as exc:
            return p, None, exc, local

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, files))
    else:
        results = [run(p) for p in files]
    out = []
    for p, rec, exc, local in results:
        report.warnings.update(local.warnings)
        report.records_in += 1
        if exc is not None:
            report.skip(p.name, str(exc))
        else:
            out.append(rec)
            report.records_out += 1
    return out


def _segments(raw_segments: Iterable[dict], page_w: int, page_h: int, doc_id: str,
              report: IngestReport) -> tuple[TextSegment, ...]:
    segs = []
    for s in raw_segments:
        text = s["text"]
        box = normalize_bbox(s["box"], page_w, page_h, doc_id)
        if not text.strip():
            report.warn("empty_segment")
            continue
        segs.append(TextSegment(text, box))
    return tuple(reading_order_sort(segs))


# --- OCR ----------------------------------------------------------------------

def parse_ocr_page(obj: dict, doc_id: str, report: Optional[IngestReport] = None,
                   source: str = "ocr") -> DocumentRecord:
    report = report if report is not None else IngestReport()
    page_w, page_h = int(obj["page_w"]), int(obj["page_h"])
    segs = _segments(obj.get("segments", []), page_w, page_h, doc_id, report)
    doc = DocumentRecord(
        doc_id=doc_id,
        segments=segs,
        page_w=page_w,
        page_h=page_h,
        image_ref=obj.get("image"),
        source=source,
    )
    if not segs:
        doc = doc.with_flag("no_text")
    return doc


def load_ocr_corpus(path, report: Optional[IngestReport] = None, *, source: str = "ocr",
                    workers: int = 1) -> list[DocumentRecord]:
    report = report if report is not None else IngestReport()
    return _map_files(
        _page_files(path),
        lambda p, rep: parse_ocr_page(_read_json(p), p.stem, rep, source),
        report,
        workers,
    )


# --- layout -------------------------------------------------------------------

def load_layout_corpus(path, report: Optional[IngestReport] = None, *,
                       source: str = "layout") -> list[DocumentRecord]:
    report = report if report is not None else IngestReport()
    data = _read_json(Path(path))
    categories = {c["id"]: str(c["name"]).lower() for c in data.get("categories", [])}
    images = {}
    for im in data.get("images", []):
        images[im["id"]] = im
    regions: dict = {i: [] for i in images}
    for ann in data.get("annotations", []):
        img_id = ann.get("image_id")
        if img_id not in images:
            report.warn("unknown_image_ref")
            continue
        im = images[img_id]
        x, y, w, h = ann["bbox"]
        try:
            box = normalize_bbox([x, y, x + w, y + h], int(im["width"]), int(im["height"]),
                                 str(im["file_name"]))
        except InvalidBoxError:
            report.warn("invalid_region_box")
            continue
        kind = categories.get(ann["category_id"])
        if kind is None:
            report.warn("unknown_category")
            continue
        regions[img_id].append(LayoutRegion(kind, box))

    out = []
    for img_id, im in sorted(images.items(), key=lambda kv: str(kv[1]["file_name"])):
        report.records_in += 1
        doc_id = Path(str(im["file_name"])).stem
        try:
            uniq = list(dict.fromkeys(regions[img_id]))
            if len(uniq) < len(regions[img_id]):
                report.warn("duplicate_region", len(regions[img_id]) - len(uniq))
            doc = DocumentRecord(
                doc_id=doc_id,
                page_w=int(im["width"]),
                page_h=int(im["height"]),
                image_ref=str(im["file_name"]),
                regions=tuple(reading_order_sort(uniq)),
                source=source,
            )
        except (ValueError, KeyError) as exc:
            report.skip(doc_id, str(exc))
            continue
        out.append(doc)
        report.records_out += 1
    return out


def attach_segments(docs: list[DocumentRecord], text_docs: list[DocumentRecord]) -> list[DocumentRecord]:
    """Give annotation-only records the segments of same-id OCR records."""
    by_id = {d.doc_id: d for d in text_docs}
    out = []
    for d in docs:
        t = by_id.get(d.doc_id)
        if t is not None and not d.segments:
            d = replace(d, segments=t.segments, flags=tuple(f for f in d.flags if f != "no_text"))
        out.append(d)
    return out


# --- tables -------------------------------------------------------------------

_TAG = re.compile(r"<[^>]*>")
_SPAN = re.compile(r'(rowspan|colspan)\s*=\s*"?(\d+)"?')


def _cell_text(tokens: list[str]) -> str:
    return html.unescape(_TAG.sub("", "".join(tokens))).strip()


def parse_table_structure(structure: list[str], cells: list[dict]):
    """Assign 1-based logical coordinates to PubTabNet cells.

    Returns ``(n_rows, n_cols, [(row, col, cell_dict)])``. Spanning cells are
    anchored at their top-left logical position.
    """
    rows = 0
    col = 1
    occupied: set[tuple[int, int]] = set()
    placed = []
    spans: list[tuple[int, int, int, int]] = []
    cell_iter = iter(cells)
    pending_attrs: Optional[list[str]] = None

    def place(attrs: str):
        nonlocal col
        if rows == 0:
            raise IngestError("cell before first <tr>")
        rs = cs = 1
        for name, val in _SPAN.findall(attrs):
            if name == "rowspan":
                rs = int(val)
            else:
                cs = int(val)
        while (rows, col) in occupied:
            col += 1
        try:
            cell = next(cell_iter)
        except StopIteration:
            raise IngestError("structure has more <td> than cells") from None
        placed.append((rows, col, cell))
        spans.append((rows, col, rs, cs))
        for r in range(rows, rows + rs):
            for c in range(col, col + cs):
                occupied.add((r, c))
        col += cs

    for tok in structure:
        t = tok.strip()
        if t == "<tr>":
            rows += 1
            col = 1
        elif t == "<td>":
            place("")
        elif t == "<td":
            pending_attrs = []
        elif pending_attrs is not None:
            if t == ">":
                place(" ".join(pending_attrs))
                pending_attrs = None
            else:
                pending_attrs.append(t)
    if next(cell_iter, None) is not None:
        raise IngestError("more cells than <td> in structure")
    if rows == 0 or not placed:
        raise IngestError("empty table")
    n_cols = max(c for _, c in occupied)
    for r, c, rs, cs in spans:
        if r + rs - 1 > rows:
            raise IngestError(f"cell at ({r},{c}) spans past the last row {rows}")
    return rows, n_cols, placed


def parse_table_line(obj: dict, report: Optional[IngestReport] = None,
                     source: str = "table") -> DocumentRecord:
    report = report if report is not None else IngestReport()
    doc_id = Path(str(obj["filename"])).stem
    width, height = obj.get("width"), obj.get("height")
    n_rows, n_cols, placed = parse_table_structure(
        obj["html"]["structure"]["tokens"], obj["html"]["cells"]
    )
    cells = []
    for r, c, cell in placed:
        text = _cell_text(cell.get("tokens", []))
        if not text:
            continue
        box = None
        if cell.get("bbox") is not None and width and height:
            box = normalize_bbox(cell["bbox"], int(width), int(height), doc_id)
        cells.append(TableCell(r, c, text, box))
    if not cells:
        raise IngestError("table has no non-empty cells")
    table = TableAnnotation(n_rows, n_cols, tuple(cells))
    segs = reading_order_sort(TextSegment(c.text, c.box) for c in cells if c.box is not None)
    return DocumentRecord(
        doc_id=doc_id,
        segments=tuple(segs),
        page_w=int(width) if width else 1000,
        page_h=int(height) if height else 1000,
        image_ref=str(obj["filename"]),
        table=table,
        source=source,
    )


def load_table_corpus(path, report: Optional[IngestReport] = None, *,
                      source: str = "table") -> list[DocumentRecord]:
    report = report if report is not None else IngestReport()
    out = []
    for lineno, line in _iter_jsonl(Path(path)):
        report.records_in += 1
        try:
            out.append(parse_table_line(json.loads(line), report, source))
            report.records_out += 1
        except (ValueError, KeyError, TypeError) as exc:
            report.skip(f"{Path(path).name}:{lineno}", str(exc))
    return sorted(out, key=lambda d: d.doc_id)


# --- VIE ----------------------------------------------------------------------

def parse_vie_linking(obj: dict, doc_id: str, report: Optional[IngestReport] = None,
                      source: str = "funsd") -> DocumentRecord:
    """FUNSD-style page. Links run from ``question`` keys to ``answer`` values."""
    report = report if report is not None else IngestReport()
    page_w, page_h = int(obj["page_w"]), int(obj["page_h"])
    entities: dict[int, VIEEntity] = {}
    raw_links = []
    for ent in obj["form"]:
        text = str(ent.get("text", "")).strip()
        for pair in ent.get("linking", []):
            raw_links.append(tuple(pair))
        if not text:
            report.warn("empty_entity")
            continue
        eid = int(ent["id"])
        if eid in entities:
            raise IngestError(f"duplicate entity id {eid}")
        box = normalize_bbox(ent["box"], page_w, page_h, doc_id)
        entities[eid] = VIEEntity(str(ent.get("label", "")).lower(), text, eid, box)

    values: dict[int, list[int]] = {}
    for key_id, value_id in dict.fromkeys(raw_links):
        key, value = entities.get(key_id), entities.get(value_id)
        if key is None or value is None:
            report.warn("dangling_link")
            continue
        if key.etype and value.etype and (key.etype, value.etype) != ("question", "answer"):
            continue
        values.setdefault(key_id, []).append(value_id)
    links = tuple(VIELink(entities[k], tuple(v)) for k, v in sorted(values.items()))
    ents = tuple(entities[k] for k in sorted(entities))
    segs = reading_order_sort(TextSegment(e.text, e.box) for e in ents)
    return DocumentRecord(
        doc_id=doc_id,
        segments=tuple(segs),
        page_w=page_w,
        page_h=page_h,
        image_ref=obj.get("image"),
        vie=VIEAnnotation("linking", links, ents),
        source=source,
    )


def parse_vie_entities(obj: dict, doc_id: str, report: Optional[IngestReport] = None,
                       source: str = "sroie") -> DocumentRecord:
    report = report if report is not None else IngestReport()
    page_w, page_h = int(obj["page_w"]), int(obj["page_h"])
    segs = _segments(obj.get("segments", []), page_w, page_h, doc_id, report)
    raw = obj["entities"]
    if isinstance(raw, dict):
        raw = [{"type": k, "text": v} for k, v in raw.items()]
    ents = []
    for e in raw:
        text = str(e.get("text", "")).strip()
        if not text:
            report.warn("empty_entity")
            continue
        ents.append(VIEEntity(str(e["type"]), text))
    return DocumentRecord(
        doc_id=doc_id,
        segments=segs,
        page_w=page_w,
        page_h=page_h,
        image_ref=obj.get("image"),
        vie=VIEAnnotation("entity", (), tuple(ents)),
        source=source,
    )


def load_vie_corpus(path, variant: str, report: Optional[IngestReport] = None, *,
                    source: Optional[str] = None, workers: int = 1) -> list[DocumentRecord]:
    report = report if report is not None else IngestReport()
    if variant == "linking":
        parse = parse_vie_linking
    elif variant == "entity":
        parse = parse_vie_entities
    else:
        raise ValueError(f"unknown VIE variant {variant!r}")
    src = source or Path(path).name
    return _map_files(
        _page_files(path),
        lambda p, rep: parse(_read_json(p), p.stem, rep, src),
        report,
        workers,
    )


# --- MRC ----------------------------------------------------------------------

def parse_mrc_line(obj: dict) -> MRCItem:
    item_id = str(obj["feta_id"])
    rows = obj["table_array"]
    if not rows or not any(rows):
        raise IngestError("empty table")
    n_rows, n_cols = len(rows), max(len(r) for r in rows)
    cells = tuple(
        TableCell(i + 1, j + 1, str(text).strip())
        for i, row in enumerate(rows)
        for j, text in enumerate(row)
    )
    table = TableAnnotation(n_rows, n_cols, cells)
    answer = str(obj.get("answer", "")).strip()
    if not answer:
        raise IngestError("empty answer")
    highlights = tuple(dict.fromkeys((int(r) + 1, int(c) + 1) for r, c in obj.get("highlighted_cell_ids", [])))
    if not highlights:
        raise IngestError("no highlighted cells")
    return MRCItem(
        item_id=item_id,
        table=table,
        question=str(obj["question"]).strip(),
        answer=answer,
        highlighted_cells=highlights,
        title=str(obj.get("table_page_title", "")),
    )


def load_mrc_corpus(path, report: Optional[IngestReport] = None) -> list[MRCItem]:
    report = report if report is not None else IngestReport()
    out = []
    for lineno, line in _iter_jsonl(Path(path)):
        report.records_in += 1
        try:
            out.append(parse_mrc_line(json.loads(line)))
            report.records_out += 1
        except (ValueError, KeyError, TypeError) as exc:
            report.skip(f"{Path(path).name}:{lineno}", str(exc))
    return sorted(out, key=lambda m: m.item_id)
