"""Zero-shot evaluation sets (QA for VIE), prompt formats and scoring."""
from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..assembler import write_lines_atomic
from ..core import BBox, DocumentRecord, TextSegment, reading_order_sort, render_layout_text
from ..llm import Client, GenerationRequest
from .metrics import anls, rouge_l_multi

log = logging.getLogger(__name__)

METRICS = {"anls": lambda pred, golds: anls(pred, golds), "rouge_l": rouge_l_multi}
PROMPT_MODES = ("plain", "layout_text")


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    doc: DocumentRecord
    question: str
    golds: tuple[str, ...]
    metric: str = "anls"
    region_hint: Optional[BBox] = None
    dataset: str = ""

    def __post_init__(self):
        if not self.golds:
            raise ValueError(f"{self.item_id}: golds must be non-empty")
        if self.metric not in METRICS:
            raise ValueError(f"{self.item_id}: unknown metric {self.metric!r}")


@dataclass
class ScoreReport:
    dataset: str
    metric: str
    n_items: int
    mean_score: float
    per_item: list = field(default_factory=list)  # dicts: item_id, prediction, score, flag
    meta: dict = field(default_factory=dict)

    @property
    def n_flagged(self) -> int:
        return sum(1 for r in self.per_item if r["flag"])

    def table(self) -> str:
        rows = [
            f"{'dataset':<16} {'metric':<8} {'items':>6} {'flagged':>8} {'score':>8}",
            f"{self.dataset:<16} {self.metric:<8} {self.n_items:>6} {self.n_flagged:>8} "
            f"{100 * self.mean_score:>8.2f}",
        ]
        return "\n".join(rows)


# --- QA for VIE ---------------------------------------------------------------

def build_qa_for_vie_linking(docs, stats: Optional[Counter] = None,
                             dataset: str = "funsd") -> list[EvalItem]:
    """One question per key linked to exactly one value."""
    stats = stats if stats is not None else Counter()
    items = []
    for doc in docs:
        vie = doc.vie
        if vie is None or vie.variant != "linking":
            raise ValueError(f"{doc.doc_id}: needs a linking-variant VIE annotation")
        for link in vie.links:
            if len(link.value_ids) != 1:
                stats["multi_link_key"] += 1
                continue
            value = vie.entity(link.value_ids[0])
            items.append(EvalItem(
                item_id=f"{doc.doc_id}/{link.key.entity_id}",
                doc=doc,
                question=f'What is the "{link.key.text}" in the document?',
                golds=(value.text,),
                metric="anls",
                dataset=dataset,
            ))
    return items


def entity_question(etype: str) -> str:
    return f"What is the {etype.lower().replace('_', ' ')} in the document?"


def build_qa_for_vie_entities(docs, stats: Optional[Counter] = None,
                              dataset: str = "sroie") -> list[EvalItem]:
    """One question per entity type that occurs exactly once on its page."""
    stats = stats if stats is not None else Counter()
    items = []
    for doc in docs:
        vie = doc.vie
        if vie is None or vie.variant != "entity":
            raise ValueError(f"{doc.doc_id}: needs an entity-variant VIE annotation")
        counts = Counter(e.etype for e in vie.entities)
        for e in vie.entities:
            if counts[e.etype] != 1:
                stats["repeated_type"] += 1
                continue
            items.append(EvalItem(
                item_id=f"{doc.doc_id}/{e.etype}",
                doc=doc,
                question=entity_question(e.etype),
                golds=(e.text,),
                metric="anls",
                dataset=dataset,
            ))
    return items


# --- prompts ------------------------------------------------------------------

def format_prompt(item: EvalItem, mode: str = "plain") -> str:
    segs = reading_order_sort(item.doc.segments)
    if mode == "plain":
        body = " ".join(s.text for s in segs)
    elif mode == "layout_text":
        body = render_layout_text(segs)
    else:
        raise ValueError(f"unknown prompt mode {mode!r}")
    parts = [body, "", f"Question: {item.question}"]
    if item.region_hint is not None:
        parts.append(f"The answer is located in the area {item.region_hint}.")
    return "\n".join(parts)


# --- adapters -----------------------------------------------------------------

class MissingPrediction(LookupError):
    pass


def gold_echo(item: EvalItem) -> str:
    return item.golds[0]


class PredictionFileAdapter:
    """Predictions read from JSONL lines ``{"item_id": ..., "prediction": ...}``."""

    def __init__(self, predictions: dict):
        self.predictions = predictions

    @classmethod
    def from_file(cls, path) -> "PredictionFileAdapter":
        preds = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    preds[str(obj["item_id"])] = str(obj["prediction"])
        return cls(preds)

    def __call__(self, item: EvalItem) -> str:
        try:
            return self.predictions[item.item_id]
        except KeyError:
            raise MissingPrediction(f"no prediction for {item.item_id}") from None


class EndpointAdapter:
    """Sends ``format_prompt`` output through a generation client."""

    def __init__(self, client: Client, mode: str = "plain"):
        if mode not in PROMPT_MODES:
            raise ValueError(f"unknown prompt mode {mode!r}")
        self.client = client
        self.mode = mode

    def __call__(self, item: EvalItem) -> str:
        return self.client.complete(GenerationRequest(format_prompt(item, self.mode), tag="eval"))


# --- scoring ------------------------------------------------------------------

def score_run(items: Sequence[EvalItem], adapter: Callable[[EvalItem], str],
              beam_note: str = "beam search, beam size 5", *, workers: int = 1,
              timeout: Optional[float] = None, metric: Optional[str] = None) -> ScoreReport:
    """Score every item; adapter failures and timeouts score 0 and are flagged.

    ``beam_note`` is stored as run metadata only; decoding is the adapter's
    business.
    """
    metrics = {it.metric for it in items}
    datasets = sorted({it.dataset for it in items})
    if len(metrics) > 1:
        raise ValueError(f"items mix metrics {sorted(metrics)}; one metric per dataset")
    item_metric = metrics.pop() if metrics else (metric or "anls")
    if metric is not None and metric != item_metric:
        raise ValueError(f"metric {metric!r} requested but the dataset is scored with {item_metric!r}")
    score_fn = METRICS[item_metric]

    def run_one(pool, it: EvalItem) -> dict:
        flag = ""
        try:
            if pool is None:
                pred = adapter(it)
            else:
                pred = pool.submit(adapter, it).result(timeout=timeout)
        except FutureTimeout:
            pred, flag = "", "timeout"
        except Exception as exc:  # any adapter failure scores zero
            log.warning("adapter failed on %s: %s", it.item_id, exc)
            pred, flag = "", f"error: {type(exc).__name__}: {exc}"
        score = 0.0 if flag else score_fn(pred, it.golds)
        return {"item_id": it.item_id, "prediction": pred, "score": score, "flag": flag}

    if workers > 1 or timeout is not None:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool, \
                ThreadPoolExecutor(max_workers=max(1, workers)) as calls:
            rows = list(pool.map(lambda it: run_one(calls, it), items))
    else:
        rows = [run_one(None, it) for it in items]
    rows.sort(key=lambda r: r["item_id"])
    mean = sum(r["score"] for r in rows) / len(rows) if rows else 0.0
    return ScoreReport(
        dataset=",".join(datasets),
        metric=item_metric,
        n_items=len(rows),
        mean_score=mean,
        per_item=rows,
        meta={"beam_note": beam_note},
    )


# --- files --------------------------------------------------------------------

def _doc_to_dict(doc: DocumentRecord) -> dict:
    return {
        "doc_id": doc.doc_id,
        "image_ref": doc.image_ref,
        "page_w": doc.page_w,
        "page_h": doc.page_h,
        "segments": [{"text": s.text, "box": s.box.as_list()} for s in doc.segments],
    }


def item_to_dict(it: EvalItem) -> dict:
    return {
        "item_id": it.item_id,
        "dataset": it.dataset,
        "metric": it.metric,
        "question": it.question,
        "golds": list(it.golds),
        "region_hint": it.region_hint.as_list() if it.region_hint else None,
        "doc": _doc_to_dict(it.doc),
    }


def item_from_dict(d: dict) -> EvalItem:
    doc = d["doc"]
    return EvalItem(
        item_id=d["item_id"],
        doc=DocumentRecord(
            doc_id=doc["doc_id"],
            image_ref=doc.get("image_ref"),
            page_w=int(doc["page_w"]),
            page_h=int(doc["page_h"]),
            segments=tuple(TextSegment(s["text"], BBox.from_list(s["box"])) for s in doc["segments"]),
        ),
        question=d["question"],
        golds=tuple(d["golds"]),
        metric=d["metric"],
        region_hint=BBox.from_list(d["region_hint"]) if d.get("region_hint") else None,
        dataset=d.get("dataset", ""),
    )


def write_eval_set(items, path):
    return write_lines_atomic(
        (json.dumps(item_to_dict(it), ensure_ascii=False, separators=(",", ":")) for it in items),
        path,
    )


def read_eval_set(path) -> list[EvalItem]:
    with open(path, encoding="utf-8") as fh:
        return [item_from_dict(json.loads(line)) for line in fh if line.strip()]


def write_report(report: ScoreReport, path):
    head = {
        "dataset": report.dataset,
        "metric": report.metric,
        "n_items": report.n_items,
        "mean_score": report.mean_score,
        "n_flagged": report.n_flagged,
        **report.meta,
    }
    lines = [json.dumps({"summary": head}, ensure_ascii=False)]
    lines += [json.dumps(r, ensure_ascii=False) for r in report.per_item]
    return write_lines_atomic(lines, path)
