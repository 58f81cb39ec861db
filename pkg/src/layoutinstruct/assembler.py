"""Mix task streams by ratio, deduplicate, write JSONL corpora and stats."""
from __future__ import annotations

import json
import math
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .core import (
    LEVELS,
    TASK_LEVEL,
    TASKS,
    InstructionRecord,
    LayoutCoTRecord,
    TextSegment,
)
from .seeding import derive_seed, rng_for

PRETRAIN_RATIO = (1, 4, 4)  # document : region : segment
SFT_RATIO = (5, 4.5, 0.5)  # image : html : mrc
RECORD_FIELDS = (
    "id", "task", "level", "doc_id", "image_ref", "input_segments",
    "question", "answer", "cot", "seed", "source",
)


def _as_fraction(v) -> Fraction:
    # str() keeps 4.5 as 9/2 rather than its binary expansion
    q = Fraction(str(v)) if isinstance(v, float) else Fraction(v)
    if q < 0:
        raise ValueError(f"ratio entries must be non-negative, got {v}")
    return q


def apportion(ratio: Sequence, total: int) -> list[int]:
    """Largest-remainder quotas summing exactly to ``total``.

    Leftover units go to the largest fractional parts; ties go to the lower
    index.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    weights = [_as_fraction(r) for r in ratio]
    denom = sum(weights)
    if denom == 0:
        raise ValueError("ratio must have a positive entry")
    shares = [w * total / denom for w in weights]
    quotas = [int(s) for s in shares]  # exact floor, shares are non-negative
    leftover = total - sum(quotas)
    order = sorted(range(len(shares)), key=lambda i: (-(shares[i] - quotas[i]), i))
    for i in order[:leftover]:
        quotas[i] += 1
    return quotas


class InsufficientStreamError(ValueError):
    pass


def mix_by_ratio(streams: Sequence[Sequence[InstructionRecord]], ratio: Sequence, total: int,
                 seed: int, *, replace: bool = False,
                 names: Optional[Sequence[str]] = None) -> list[InstructionRecord]:
    """Sample each stream to its quota, then shuffle the union.

    Randomness comes from ``seed`` alone, so the result does not depend on how
    the streams were produced.
    """
    if len(streams) != len(ratio):
        raise ValueError(f"{len(streams)} streams but {len(ratio)} ratio entries")
    names = list(names) if names is not None else [f"stream {i}" for i in range(len(streams))]
    quotas = apportion(ratio, total)
    mixed: list[InstructionRecord] = []
    for i, (stream, quota) in enumerate(zip(streams, quotas)):
        rng = rng_for(derive_seed(seed, "mix", i))
        if quota == 0:
            continue
        if not replace and len(stream) < quota:
            raise InsufficientStreamError(
                f"{names[i]} has {len(stream)} records but its quota is {quota}"
            )
        if replace:
            if not stream:
                raise InsufficientStreamError(f"{names[i]} is empty but its quota is {quota}")
            mixed.extend(rng.choices(list(stream), k=quota))
        else:
            mixed.extend(rng.sample(list(stream), quota))
    rng_for(derive_seed(seed, "shuffle")).shuffle(mixed)
    return mixed


def dedup(records):
    """Drop repeats of (task, doc_id, question, answer), keeping the first."""
    seen = set()
    out = []
    for r in records:
        key = (r.task, r.doc_id, r.question, r.answer)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


# --- serialization ------------------------------------------------------------

def record_to_dict(r: InstructionRecord) -> dict:
    d = {
        "id": r.id,
        "task": r.task,
        "level": r.level,
        "doc_id": r.doc_id,
        "image_ref": r.image_ref,
        "input_segments": [s.to_dict() for s in r.input_segments],
        "question": r.question,
        "answer": r.answer,
        "cot": r.cot.to_dict() if r.cot is not None else None,
        "seed": r.seed,
        "source": r.source,
    }
    assert tuple(d) == RECORD_FIELDS
    return d


def record_from_dict(d: dict) -> InstructionRecord:
    if set(d) != set(RECORD_FIELDS):
        raise ValueError(f"record fields differ from schema: {sorted(set(d) ^ set(RECORD_FIELDS))}")
    return InstructionRecord(
        id=d["id"],
        task=d["task"],
        level=d["level"],
        doc_id=d["doc_id"],
        image_ref=d["image_ref"],
        input_segments=tuple(TextSegment.from_dict(s) for s in d["input_segments"]),
        question=d["question"],
        answer=d["answer"],
        cot=LayoutCoTRecord.from_dict(d["cot"]) if d["cot"] is not None else None,
        seed=int(d["seed"]),
        source=d["source"],
    )


def dumps_record(r: InstructionRecord) -> str:
    return json.dumps(record_to_dict(r), ensure_ascii=False, separators=(",", ":"))


def write_lines_atomic(lines, path) -> Path:
    """Write text lines to ``path`` via a temp file; nothing is left on failure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def emit_jsonl(records, path) -> Path:
    return write_lines_atomic((dumps_record(r) for r in records), path)


def read_jsonl(path) -> list[InstructionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_dict(json.loads(line)) for line in fh if line.strip()]


# --- stats --------------------------------------------------------------------

def _percentile(sorted_vals: list[int], q: float) -> float:
    if not sorted_vals:
        return 0.0
    # nearest-rank
    k = min(len(sorted_vals) - 1, max(0, math.ceil(q * len(sorted_vals)) - 1))
    return float(sorted_vals[k])


@dataclass
class StatsReport:
    total: int = 0
    by_level: dict = field(default_factory=lambda: {lv: 0 for lv in LEVELS})
    by_task: dict = field(default_factory=lambda: {t: 0 for t in TASKS})
    answer_words: dict = field(default_factory=dict)
    ddd_mean_words: float = 0.0
    ddd_over_cap: int = 0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "by_level": self.by_level,
            "by_task": self.by_task,
            "answer_words": self.answer_words,
            "ddd_mean_words": self.ddd_mean_words,
            "ddd_over_cap": self.ddd_over_cap,
        }


def dataset_stats(records, ddd_word_cap: int = 500) -> StatsReport:
    report = StatsReport()
    lengths: dict[str, list[int]] = {t: [] for t in TASKS}
    for r in records:
        report.total += 1
        report.by_level[TASK_LEVEL[r.task]] += 1
        report.by_task[r.task] += 1
        lengths[r.task].append(len(r.answer.split()))
    for task in TASKS:
        vals = sorted(lengths[task])
        report.answer_words[task] = {
            "mean": round(statistics.fmean(vals), 4) if vals else 0.0,
            "p50": _percentile(vals, 0.5),
            "p90": _percentile(vals, 0.9),
            "max": vals[-1] if vals else 0,
        }
    ddd = lengths["ddd"]
    report.ddd_mean_words = report.answer_words["ddd"]["mean"]
    report.ddd_over_cap = sum(1 for n in ddd if n >= ddd_word_cap)
    return report
