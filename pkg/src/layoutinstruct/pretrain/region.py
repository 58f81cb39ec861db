"""Region-level tasks: layout analysis in both directions and table understanding."""
from __future__ import annotations

from collections import Counter
from typing import Optional

from ..core import DocumentRecord, InstructionRecord, reading_order_sort
from ..seeding import rng_for
from ._common import make_record, pick_question

TU_KINDS = ("shape", "logical", "content")


def build_dla_locate(doc: DocumentRecord, kind: str, seed: int) -> Optional[InstructionRecord]:
    """Ask for every region of ``kind``; None when the page has none."""
    matches = reading_order_sort(r for r in doc.regions if r.kind == kind)
    if not matches:
        return None
    rng = rng_for(seed)
    question = pick_question(rng, "dla_locate", kind=kind)
    answer = "\n".join(str(r.box) for r in matches)
    return make_record("dla_locate", doc, question, answer, seed, suffix=kind)


def build_dla_classify(doc: DocumentRecord, region_index: int, seed: int) -> InstructionRecord:
    if not 0 <= region_index < len(doc.regions):
        raise IndexError(
            f"{doc.doc_id}: region index {region_index} out of range ({len(doc.regions)} regions)"
        )
    region = doc.regions[region_index]
    rng = rng_for(seed)
    question = pick_question(rng, "dla_classify", box=str(region.box))
    return make_record("dla_classify", doc, question, region.kind, seed, suffix=region_index)


def build_tu(doc: DocumentRecord, kind: str, seed: int) -> InstructionRecord:
    """Table shape, logical coordinate of a cell, or contents of one row/column."""
    table = doc.table
    if table is None:
        raise ValueError(f"{doc.doc_id}: no table annotation")
    if kind not in TU_KINDS:
        raise ValueError(f"unknown table task {kind!r}")
    rng = rng_for(seed)

    if kind == "shape":
        question = pick_question(rng, "tu_shape")
        answer = f"{table.n_rows} rows and {table.n_cols} columns"
    elif kind == "logical":
        cells = sorted(table.cells, key=lambda c: (c.row, c.col))
        counts = Counter(c.text for c in cells)
        # a cell named by its text must be unambiguous when possible
        pool = [c for c in cells if counts[c.text] == 1] or cells
        cell = rng.choice(pool)
        question = pick_question(rng, "tu_logical", cell=cell.text)
        answer = f"row {cell.row}, column {cell.col}"
    else:
        axis = rng.choice(("row", "column"))
        n = table.n_rows if axis == "row" else table.n_cols
        start = rng.randint(1, n)
        for step in range(n):
            index = (start - 1 + step) % n + 1
            line = table.row_cells(index) if axis == "row" else table.col_cells(index)
            if line:
                break
        question = pick_question(rng, "tu_content", line=f"{axis} {index}")
        answer = " | ".join(c.text for c in line)
    return make_record(f"tu_{kind}", doc, question, answer, seed)
