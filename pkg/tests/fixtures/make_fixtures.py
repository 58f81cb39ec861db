"""Regenerate the synthetic fixture corpora under tests/fixtures/.

    python3 tests/fixtures/make_fixtures.py

Everything is drawn from a fixed RNG so reruns produce identical files. The
canned mock responses are keyed by prompt digests, so they are computed with
the package's own prompt rendering; rerun this script after changing a
prompt template.
"""
from __future__ import annotations

import json
import random
import shutil
from pathlib import Path

from layoutinstruct.cot import CorpusSource, represent_document
from layoutinstruct.core import render_layout_text, truncate_document
from layoutinstruct.ingest import parse_ocr_page
from layoutinstruct.llm import prompt_digest, render_prompt

ROOT = Path(__file__).resolve().parent

WORDS = (
    "invoice date total amount customer address phone order number item price "
    "quantity tax subtotal balance due account reference payment method shipping "
    "report summary revenue profit quarter region sales growth margin budget cost "
    "project status owner deadline review approved pending signed notes contact"
).split()

N_PRETRAIN_DOCS = 40
N_TABLES = 30
N_SFT_IMAGE = 12
N_SFT_HTML = 12
N_SFT_MRC = 6
PAIRS_PER_DOC = 5


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def _dump_jsonl(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _phrase(rng: random.Random, used: set) -> str:
    while True:
        n = rng.randint(1, 3)
        text = " ".join(rng.choice(WORDS) for _ in range(n)).capitalize()
        if rng.random() < 0.5:
            text += f" {rng.randint(1, 999)}"
        if text not in used:
            used.add(text)
            return text


def make_page(rng: random.Random, n_segments: int, page_w: int, page_h: int,
              extra: tuple = ()) -> dict:
    """A page of stacked text lines with pixel boxes."""
    used: set = set()
    texts = [_phrase(rng, used) for _ in range(n_segments - len(extra))] + list(extra)
    segs = []
    row_h = (page_h - 80) // len(texts)
    for i, text in enumerate(texts):
        y1 = 40 + i * row_h + rng.randint(0, row_h // 4)
        x1 = rng.randint(20, page_w // 3)
        x2 = min(page_w - 10, x1 + 12 * len(text) + rng.randint(0, 40))
        segs.append({"text": text, "box": [x1, y1, x2, y1 + max(8, row_h // 2)]})
    rng.shuffle(segs)  # ingest has to restore reading order
    return {"page_w": page_w, "page_h": page_h, "segments": segs}


# --- pretraining --------------------------------------------------------------

def make_pretrain(rng: random.Random) -> None:
    out = ROOT / "pretrain"
    shutil.rmtree(out, ignore_errors=True)
    pages = {}
    for i in range(N_PRETRAIN_DOCS):
        doc_id = f"doc-{i:03d}"
        extra = ('Escapes <a> and \\ and | pipes',) if i == 0 else ()
        page = make_page(rng, rng.randint(10, 14), rng.choice((800, 1000, 1240)), 1000, extra)
        page["image"] = f"{doc_id}.png"
        pages[doc_id] = page
        _dump(page, out / "ocr" / f"{doc_id}.json")

    # COCO-style layout annotations for the same pages
    cats = [{"id": i + 1, "name": n} for i, n in enumerate(("Text", "Title", "List", "Table", "Figure"))]
    images, anns = [], []
    for img_id, (doc_id, page) in enumerate(sorted(pages.items()), start=1):
        w, h = page["page_w"], page["page_h"]
        images.append({"id": img_id, "file_name": f"{doc_id}.png", "width": w, "height": h})
        layout = [(2, 40, 30, w - 80, 50), (1, 40, 100, w - 80, 200), (1, 40, 320, w // 2 - 60, 180),
                  (3, 40, 520, w - 80, 150), (rng.choice((4, 5)), 40, 700, w - 80, 250)]
        if rng.random() < 0.3:
            layout.append((1, w // 2, 320, w // 2 - 40, 180))
        for cat, x, y, bw, bh in layout:
            anns.append({"id": len(anns) + 1, "image_id": img_id, "category_id": cat,
                         "bbox": [x, y, bw, bh]})
    _dump({"images": images, "annotations": anns, "categories": cats}, out / "layout.json")

    # PubTabNet-style tables
    lines = []
    for t in range(N_TABLES):
        n_rows, n_cols = rng.randint(2, 4), rng.randint(2, 4)
        used: set = set()
        structure, cells = ["<thead>"], []
        for r in range(n_rows):
            structure.append("<tr>")
            for c in range(n_cols):
                structure += ["<td>", "</td>"]
                text = _phrase(rng, used) if r else f"Col {c + 1}"
                x1, y1 = 10 + c * 150, 10 + r * 40
                cells.append({"tokens": list(text), "bbox": [x1, y1, x1 + 140, y1 + 30]})
            structure.append("</tr>")
            if r == 0:
                structure += ["</thead>", "<tbody>"]
        structure.append("</tbody>")
        lines.append({"filename": f"table-{t:03d}.png", "width": 10 + n_cols * 150,
                      "height": 10 + n_rows * 40,
                      "html": {"structure": {"tokens": structure}, "cells": cells}})
    _dump_jsonl(lines, out / "tables.jsonl")

    # canned descriptions for every DDD prompt
    canned = []
    for doc_id, page in sorted(pages.items()):
        doc = truncate_document(parse_ocr_page(page, doc_id))
        prompt = render_prompt("ddd", {"document": render_layout_text(doc.segments)})
        texts = [s.text for s in doc.segments]
        desc = (f"This page, {doc_id}, is a business document with {len(texts)} lines of text. "
                f"It opens with \"{texts[0]}\" and closes with \"{texts[-1]}\". "
                "The lines are stacked top to bottom in a single column.")
        canned.append({"prompt_sha256": prompt_digest(prompt), "response": desc})
    _dump_jsonl(canned, out / "mock_responses.jsonl")
    _dump({
        "inputs": {"ocr": "ocr", "layout": "layout.json", "table": "tables.jsonl"},
        "mock_responses": "mock_responses.jsonl",
        "segment_samples": 5,
        "region_samples": 2,
    }, out / "config.json")


# --- SFT ----------------------------------------------------------------------

def _qa_objects(rng: random.Random, texts: list[str], n: int, hallucinate: bool) -> list:
    objs = []
    for k in range(n):
        picked = rng.sample(texts, rng.randint(1, min(2, len(texts))))
        if k == 1 and rng.random() < 0.5:
            # a relevant sentence spanning two consecutive lines
            i = texts.index(picked[0])
            if i + 1 < len(texts):
                picked = [f"{texts[i]} {texts[i + 1]}"]
        if hallucinate and k == n - 1:
            picked = ["This sentence appears nowhere on the page"]
        objs.append({
            "question": f"What does line {k + 1} of the page say about {picked[0].split()[0].lower()}?",
            "answer": picked[0],
            "analysis": f"Question {k + 1} is a key-value question about a single field.",
            "relevant_sentences": picked,
            "explanation": f"The page states \"{picked[0]}\", so the answer is \"{picked[0]}\".",
        })
    return objs


def _html_for(page: dict) -> str:
    rows = "\n".join(
        f'<p style="position:absolute;left:{s["box"][0]}px;top:{s["box"][1]}px">{s["text"]}</p>'
        for s in sorted(page["segments"], key=lambda s: (s["box"][1], s["box"][0]))
    )
    return f"<!DOCTYPE html>\n<html><body>\n{rows}\n</body></html>\n"


def make_sft(rng: random.Random) -> None:
    out = ROOT / "sft"
    shutil.rmtree(out, ignore_errors=True)
    canned = []

    def add_qa(src: CorpusSource, texts: list[str], idx: int) -> None:
        rep = represent_document(src)
        prompt = render_prompt("qa_cot", {"document": rep.body})
        objs = _qa_objects(rng, texts, PAIRS_PER_DOC, hallucinate=idx % 4 == 3)
        if idx % 5 == 2:
            objs.append({"question": "Incomplete object", "answer": "x"})
        body = json.dumps(objs, indent=1, ensure_ascii=False)
        if idx % 6 == 1:
            # first reply is not JSON; the reprompt gets the real one
            canned.append({"prompt_sha256": prompt_digest(prompt),
                           "response": "Sure! Here are some questions about the page."})
            prompt = render_prompt("reprompt", {"prompt": prompt})
        if idx % 3 == 0:
            body = f"```json\n{body}\n```"
        canned.append({"prompt_sha256": prompt_digest(prompt), "response": body})

    for i in range(N_SFT_IMAGE):
        doc_id = f"img-{i:02d}"
        page = make_page(rng, rng.randint(8, 12), 1000, 1400)
        page["image"] = f"images/{doc_id}.png"
        _dump(page, out / "images" / f"{doc_id}.json")
        doc = parse_ocr_page(page, doc_id, source="image")
        add_qa(CorpusSource("image", doc_id, doc), [s.text for s in doc.segments], i)

    for i in range(N_SFT_HTML):
        doc_id = f"web-{i:02d}"
        page = make_page(rng, rng.randint(8, 12), 1200, 1600)
        html = _html_for(page)
        (out / "html").mkdir(parents=True, exist_ok=True)
        (out / "html" / f"{doc_id}.html").write_text(html, encoding="utf-8")
        _dump(page, out / "html" / f"{doc_id}.json")
        side = parse_ocr_page(page, doc_id, source="html")
        add_qa(CorpusSource("html", doc_id, html, side), [s.text for s in side.segments], i)

    mrc = []
    for i in range(N_SFT_MRC):
        n_rows, n_cols = rng.randint(3, 5), rng.randint(2, 4)
        used: set = set()
        table = [[f"Header {c + 1}" for c in range(n_cols)]]
        table += [[_phrase(rng, used) for _ in range(n_cols)] for _ in range(n_rows - 1)]
        r = rng.randint(1, n_rows - 1)
        hl = [[r, 0], [r, rng.randint(1, n_cols - 1)]]
        mrc.append({
            "feta_id": 1000 + i,
            "table_page_title": f"Fixture table {i}",
            "table_array": table,
            "highlighted_cell_ids": hl,
            "question": f"What is listed next to {table[r][0]}?",
            "answer": f"{table[r][0]} is listed with {table[hl[1][0]][hl[1][1]]}.",
        })
    _dump_jsonl(mrc, out / "mrc.jsonl")
    _dump_jsonl(canned, out / "mock_responses.jsonl")
    _dump({
        "inputs": {"sft_images": "images", "html": "html", "mrc": "mrc.jsonl"},
        "mock_responses": "mock_responses.jsonl",
    }, out / "config.json")


# --- VIE ----------------------------------------------------------------------

def make_vie() -> None:
    out = ROOT / "vie"
    shutil.rmtree(out, ignore_errors=True)
    form = []

    def ent(eid, text, label, box, links=()):
        form.append({"id": eid, "text": text, "label": label, "box": box,
                     "linking": [list(p) for p in links]})

    # keys 0, 2, 4 link to one answer each; keys 6 and 9 to two
    ent(0, "NAME:", "question", [40, 40, 120, 60], [(0, 1)])
    ent(1, "JOHN", "answer", [130, 40, 200, 60], [(0, 1)])
    ent(2, "DATE:", "question", [40, 80, 120, 100], [(2, 3)])
    ent(3, "12/03/1998", "answer", [130, 80, 260, 100], [(2, 3)])
    ent(4, "FAX NO.", "question", [40, 120, 130, 140], [(4, 5)])
    ent(5, "(212) 555-0199", "answer", [140, 120, 300, 140], [(4, 5)])
    ent(6, "CC:", "question", [40, 160, 90, 180], [(6, 7), (6, 8)])
    ent(7, "R. Smith", "answer", [100, 160, 190, 180], [(6, 7)])
    ent(8, "L. Jones", "answer", [200, 160, 290, 180], [(6, 8)])
    ent(9, "SUBJECT:", "question", [40, 200, 140, 220], [(9, 10), (9, 11)])
    ent(10, "Budget review", "answer", [150, 200, 300, 220], [(9, 10)])
    ent(11, "Q3 planning", "answer", [310, 200, 440, 220], [(9, 11)])
    ent(12, "CONFIDENTIAL", "header", [200, 5, 400, 25])
    _dump({"page_w": 600, "page_h": 800, "image": "form-001.png", "form": form},
          out / "funsd" / "form-001.json")

    segs = [
        {"text": "ACME TRADING SDN BHD", "box": [50, 20, 350, 45]},
        {"text": "12 Main St, Springfield", "box": [50, 50, 330, 70]},
        {"text": "Date: 2018-03-02", "box": [50, 90, 250, 110]},
        {"text": "TOTAL 45.60", "box": [50, 400, 250, 420]},
        {"text": "TOTAL ROUNDED 45.60", "box": [50, 430, 300, 450]},
    ]
    entities = [
        {"type": "company", "text": "ACME TRADING SDN BHD"},
        {"type": "address", "text": "12 Main St, Springfield"},
        {"type": "date", "text": "2018-03-02"},
        {"type": "total", "text": "45.60"},
        {"type": "total", "text": "45.60"},
    ]
    _dump({"page_w": 400, "page_h": 600, "image": "receipt-001.png", "segments": segs,
           "entities": entities}, out / "sroie" / "receipt-001.json")
    _dump({"inputs": {"vie_linking": {"funsd": "funsd"}, "vie_entity": {"sroie": "sroie"}}},
          out / "config.json")


def main() -> None:
    rng = random.Random(20231016)
    make_pretrain(rng)
    make_sft(rng)
    make_vie()


if __name__ == "__main__":
    main()
