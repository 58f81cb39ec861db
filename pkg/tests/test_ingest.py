import json

import pytest

from layoutinstruct.core import BBox
from layoutinstruct.ingest import (
    IngestError,
    IngestReport,
    attach_segments,
    load_layout_corpus,
    load_mrc_corpus,
    load_ocr_corpus,
    load_table_corpus,
    load_vie_corpus,
    parse_mrc_line,
    parse_table_line,
    parse_vie_entities,
    parse_vie_linking,
)


def write(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


# --- OCR ----------------------------------------------------------------------

def test_ocr_page_with_three_words_in_reading_order(tmp_path):
    write(tmp_path / "p1.json", {"page_w": 200, "page_h": 100, "segments": [
        {"text": "third", "box": [10, 60, 50, 70]},
        {"text": "second", "box": [120, 10, 180, 20]},
        {"text": "first", "box": [10, 10, 50, 20]},
    ]})
    [doc] = load_ocr_corpus(tmp_path)
    assert doc.doc_id == "p1"
    assert [s.text for s in doc.segments] == ["first", "second", "third"]
    assert doc.segments[0].box == BBox(50, 100, 250, 200)


def test_ocr_malformed_file_is_skipped_and_counted(tmp_path):
    write(tmp_path / "good.json", {"page_w": 10, "page_h": 10, "segments": [{"text": "a", "box": [0, 0, 1, 1]}]})
    write(tmp_path / "inverted.json", {"page_w": 10, "page_h": 10, "segments": [{"text": "a", "box": [5, 0, 1, 1]}]})
    (tmp_path / "broken.json").write_text("{not json", encoding="utf-8")
    report = IngestReport()
    docs = load_ocr_corpus(tmp_path, report)
    assert [d.doc_id for d in docs] == ["good"]
    assert (report.records_in, report.records_out, report.records_skipped) == (3, 1, 2)
    assert any("inverted" in e for e in report.errors)


def test_ocr_empty_text_is_flagged(tmp_path):
    write(tmp_path / "blank.json", {"page_w": 10, "page_h": 10, "segments": [{"text": "  ", "box": [0, 0, 1, 1]}]})
    report = IngestReport()
    [doc] = load_ocr_corpus(tmp_path, report)
    assert doc.segments == () and "no_text" in doc.flags
    assert report.warnings["empty_segment"] == 1


def test_ocr_parallel_load_matches_serial(fixtures_dir):
    a, b = IngestReport(), IngestReport()
    serial = load_ocr_corpus(fixtures_dir / "pretrain" / "ocr", a)
    parallel = load_ocr_corpus(fixtures_dir / "pretrain" / "ocr", b, workers=8)
    assert serial == parallel and a == b


def test_missing_directory_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_ocr_corpus(tmp_path / "nope")


# --- layout -------------------------------------------------------------------

def _coco(anns):
    return {
        "images": [{"id": 1, "file_name": "pg.png", "width": 100, "height": 200}],
        "categories": [{"id": 1, "name": "Title"}, {"id": 2, "name": "Table"}],
        "annotations": anns,
    }


def test_layout_kinds_and_boxes(tmp_path):
    path = write(tmp_path / "layout.json", _coco([
        {"image_id": 1, "category_id": 2, "bbox": [10, 100, 80, 50]},
        {"image_id": 1, "category_id": 1, "bbox": [10, 10, 80, 20]},
        {"image_id": 1, "category_id": 1, "bbox": [10, 10, 80, 20]},
        {"image_id": 9, "category_id": 1, "bbox": [0, 0, 1, 1]},
    ]))
    report = IngestReport()
    [doc] = load_layout_corpus(path, report)
    assert doc.doc_id == "pg"
    assert {r.kind for r in doc.regions} == {"title", "table"}
    assert [r.kind for r in doc.regions] == ["title", "table"]
    assert doc.regions[1].box == BBox(100, 500, 900, 750)
    assert report.warnings["duplicate_region"] == 1
    assert report.warnings["unknown_image_ref"] == 1


def test_attach_segments_by_doc_id(tmp_path):
    path = write(tmp_path / "layout.json", _coco([]))
    write(tmp_path / "ocr" / "pg.json", {"page_w": 100, "page_h": 200, "segments": [{"text": "hi", "box": [0, 0, 10, 10]}]})
    [doc] = attach_segments(load_layout_corpus(path), load_ocr_corpus(tmp_path / "ocr"))
    assert [s.text for s in doc.segments] == ["hi"]


# --- tables -------------------------------------------------------------------

def _cells(*texts):
    return [{"tokens": list(t), "bbox": [0, 0, 10, 10]} for t in texts]


def test_table_2x2():
    doc = parse_table_line({
        "filename": "t.png", "width": 100, "height": 100,
        "html": {"structure": {"tokens": ["<tr>", "<td>", "</td>", "<td>", "</td>", "</tr>",
                                          "<tr>", "<td>", "</td>", "<td>", "</td>", "</tr>"]},
                 "cells": _cells("A", "B", "C", "D")},
    })
    t = doc.table
    assert (t.n_rows, t.n_cols, len(t.cells)) == (2, 2, 4)
    assert t.cell_at(2, 1).text == "C"


def test_table_spans_and_html_tokens():
    tokens = ["<thead>", "<tr>", "<td", ' colspan="2"', ">", "</td>", "</tr>", "</thead>",
              "<tbody>", "<tr>", "<td", ' rowspan="2"', ">", "</td>", "<td>", "</td>", "</tr>",
              "<tr>", "<td>", "</td>", "</tr>", "</tbody>"]
    cells = [{"tokens": ["<b>", "H", "</b>"]}, {"tokens": ["x"]}, {"tokens": ["y"]}, {"tokens": ["z"]}]
    doc = parse_table_line({"filename": "s.png", "html": {"structure": {"tokens": tokens}, "cells": cells}})
    t = doc.table
    assert (t.n_rows, t.n_cols) == (3, 2)
    assert [(c.row, c.col, c.text) for c in t.cells] == [(1, 1, "H"), (2, 1, "x"), (2, 2, "y"), (3, 2, "z")]


def test_table_rowspan_past_last_row_rejected():
    tokens = ["<tr>", "<td", ' rowspan="3"', ">", "</td>", "</tr>", "<tr>", "<td>", "</td>", "</tr>"]
    with pytest.raises(IngestError, match="spans past"):
        parse_table_line({"filename": "bad.png", "html": {"structure": {"tokens": tokens}, "cells": _cells("a", "b")}})


def test_table_corpus_skips_bad_lines(tmp_path):
    good = {"filename": "g.png", "html": {"structure": {"tokens": ["<tr>", "<td>", "</td>", "</tr>"]}, "cells": _cells("a")}}
    empty = {"filename": "e.png", "html": {"structure": {"tokens": []}, "cells": []}}
    report = IngestReport()
    docs = load_table_corpus(write_jsonl(tmp_path / "t.jsonl", [good, empty]), report)
    assert [d.doc_id for d in docs] == ["g"] and report.records_skipped == 1


# --- VIE ----------------------------------------------------------------------

def test_vie_linking_two_links():
    obj = {"page_w": 100, "page_h": 100, "form": [
        {"id": 0, "text": "NAME:", "label": "question", "box": [0, 0, 10, 10], "linking": [[0, 1]]},
        {"id": 1, "text": "JOHN", "label": "answer", "box": [20, 0, 30, 10], "linking": [[0, 1]]},
        {"id": 2, "text": "DATE:", "label": "question", "box": [0, 20, 10, 30], "linking": [[2, 3]]},
        {"id": 3, "text": "today", "label": "answer", "box": [20, 20, 30, 30], "linking": [[2, 3], [2, 9]]},
        {"id": 4, "text": "", "label": "other", "box": [0, 0, 1, 1], "linking": []},
    ]}
    report = IngestReport()
    doc = parse_vie_linking(obj, "f", report)
    assert doc.vie.variant == "linking"
    assert [(l.key.text, l.value_ids) for l in doc.vie.links] == [("NAME:", (1,)), ("DATE:", (3,))]
    assert report.warnings["dangling_link"] == 1 and report.warnings["empty_entity"] == 1


def test_vie_entities_four_types():
    obj = {"page_w": 100, "page_h": 100, "segments": [{"text": "x", "box": [0, 0, 1, 1]}],
           "entities": {"company": "ACME", "date": "1/1", "address": "12 Main St", "total": "3.00"}}
    doc = parse_vie_entities(obj, "r")
    assert doc.vie.variant == "entity" and len(doc.vie.entities) == 4


def test_vie_fixture_counts(fixtures_dir):
    [form] = load_vie_corpus(fixtures_dir / "vie" / "funsd", "linking")
    assert len(form.vie.links) == 5
    assert sorted(len(l.value_ids) for l in form.vie.links) == [1, 1, 1, 2, 2]


# --- MRC ----------------------------------------------------------------------

def _mrc(**kw):
    base = {"feta_id": 7, "table_array": [["h1", "h2", "h3"], ["a", "b", "c"], ["d", "e", "f"]],
            "highlighted_cell_ids": [[1, 0], [2, 2]], "question": "q?", "answer": "ans"}
    base.update(kw)
    return base


def test_mrc_item_3x3_two_highlights():
    item = parse_mrc_line(_mrc())
    assert (item.table.n_rows, item.table.n_cols) == (3, 3)
    assert item.highlighted_cells == ((2, 1), (3, 3))


@pytest.mark.parametrize("kw", [{"answer": " "}, {"highlighted_cell_ids": []},
                                {"highlighted_cell_ids": [[5, 5]]}, {"table_array": []}])
def test_mrc_bad_items_are_skipped(tmp_path, kw):
    report = IngestReport()
    items = load_mrc_corpus(write_jsonl(tmp_path / "m.jsonl", [_mrc(), _mrc(feta_id=8, **kw)]), report)
    assert [i.item_id for i in items] == ["7"] and report.records_skipped == 1
