"""Domain types and box/text geometry shared across the toolkit.

Boxes are integers on a 0-1000 page scale (thousandths of page width and
height), the convention of the LayoutLM family of encoders.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence

SCALE = 1000
MASK_TOKEN = "[MASK]"
MAX_DOC_TOKENS = 512

TASKS = (
    "ddd", "tlr", "dla_locate", "dla_classify", "tu_shape", "tu_logical",
    "tu_content", "mvlm", "mask_pos", "geometric", "cot_qa",
)
TASK_LEVEL = {
    "ddd": "document",
    "tlr": "document",
    "dla_locate": "region",
    "dla_classify": "region",
    "tu_shape": "region",
    "tu_logical": "region",
    "tu_content": "region",
    "mvlm": "segment",
    "mask_pos": "segment",
    "geometric": "segment",
    "cot_qa": "sft",
}
LEVELS = ("document", "region", "segment", "sft")


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not isinstance(v, int) or isinstance(v, bool):
                raise InvalidBoxError(f"box coordinates must be int, got {v!r}")
        if not (0 <= self.x1 <= self.x2 <= SCALE and 0 <= self.y1 <= self.y2 <= SCALE):
            raise InvalidBoxError(f"box out of range or inverted: {self.as_list()}")

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    def __str__(self) -> str:
        return "[{},{},{},{}]".format(*self.as_list())

    @property
    def is_zero(self) -> bool:
        return self.as_list() == [0, 0, 0, 0]

    @property
    def center2(self) -> tuple[int, int]:
        """Center scaled by 2, so it stays an exact integer."""
        return self.x1 + self.x2, self.y1 + self.y2

    @classmethod
    def from_list(cls, values: Sequence[int]) -> "BBox":
        if len(values) != 4:
            raise InvalidBoxError(f"expected 4 coordinates, got {list(values)!r}")
        return cls(*(int(v) for v in values))


ZERO_BOX = BBox(0, 0, 0, 0)


@dataclass(frozen=True)
class TextSegment:
    text: str
    box: BBox
    masked_text: bool = False
    zeroed_box: bool = False

    def __post_init__(self):
        if self.masked_text and self.zeroed_box:
            raise ValueError("a segment cannot be both text-masked and box-zeroed")
        if self.masked_text and self.text != MASK_TOKEN:
            raise ValueError(f"masked segment must carry {MASK_TOKEN!r}")
        if self.zeroed_box and not self.box.is_zero:
            raise ValueError("zeroed segment must carry box (0,0,0,0)")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "box": self.box.as_list(),
            "masked_text": self.masked_text,
            "zeroed_box": self.zeroed_box,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextSegment":
        return cls(
            text=d["text"],
            box=BBox.from_list(d["box"]),
            masked_text=bool(d.get("masked_text", False)),
            zeroed_box=bool(d.get("zeroed_box", False)),
        )


@dataclass(frozen=True)
class LayoutRegion:
    kind: str
    box: BBox


@dataclass(frozen=True)
class TableCell:
    row: int
    col: int
    text: str
    box: Optional[BBox] = None


@dataclass(frozen=True)
class TableAnnotation:
    n_rows: int
    n_cols: int
    cells: tuple[TableCell, ...]

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"table shape must be positive, got {self.n_rows}x{self.n_cols}")
        seen = set()
        for c in self.cells:
            if not (1 <= c.row <= self.n_rows and 1 <= c.col <= self.n_cols):
                raise ValueError(
                    f"cell ({c.row},{c.col}) outside {self.n_rows}x{self.n_cols} grid"
                )
            if (c.row, c.col) in seen:
                raise ValueError(f"duplicate cell ({c.row},{c.col})")
            seen.add((c.row, c.col))

    def cell_at(self, row: int, col: int) -> Optional[TableCell]:
        for c in self.cells:
            if c.row == row and c.col == col:
                return c
        return None

    def row_cells(self, row: int) -> list[TableCell]:
        return sorted((c for c in self.cells if c.row == row), key=lambda c: c.col)

    def col_cells(self, col: int) -> list[TableCell]:
        return sorted((c for c in self.cells if c.col == col), key=lambda c: c.row)


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    segments: tuple[TextSegment, ...] = ()
    page_w: int = SCALE
    page_h: int = SCALE
    image_ref: Optional[str] = None
    regions: tuple[LayoutRegion, ...] = ()
    table: Optional[TableAnnotation] = None
    vie: Optional[object] = None  # ingest.VIEAnnotation
    source: str = ""
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.page_w <= 0 or self.page_h <= 0:
            raise ValueError(f"{self.doc_id}: page size must be positive")

    @property
    def has_text(self) -> bool:
        return bool(self.segments)

    def with_flag(self, flag: str) -> "DocumentRecord":
        if flag in self.flags:
            return self
        return replace(self, flags=self.flags + (flag,))


@dataclass(frozen=True)
class LayoutCoTRecord:
    step1: str
    step2_box: BBox
    step3: str

    def to_dict(self) -> dict:
        return {"step1": self.step1, "step2_box": self.step2_box.as_list(), "step3": self.step3}

    @classmethod
    def from_dict(cls, d: dict) -> "LayoutCoTRecord":
        return cls(d["step1"], BBox.from_list(d["step2_box"]), d["step3"])


@dataclass(frozen=True)
class InstructionRecord:
    id: str
    task: str
    doc_id: str
    question: str
    answer: str
    input_segments: tuple[TextSegment, ...] = ()
    cot: Optional[LayoutCoTRecord] = None
    seed: int = 0
    source: str = ""
    image_ref: Optional[str] = None
    level: str = field(default="")

    def __post_init__(self):
        if self.task not in TASK_LEVEL:
            raise ValueError(f"unknown task {self.task!r}")
        implied = TASK_LEVEL[self.task]
        if not self.level:
            object.__setattr__(self, "level", implied)
        elif self.level != implied:
            raise ValueError(f"task {self.task} implies level {implied}, got {self.level}")
        if not self.answer:
            raise ValueError(f"{self.id}: answer must be non-empty")


# --- geometry -----------------------------------------------------------------

def _round_half_up(q: Fraction) -> int:
    return int((q + Fraction(1, 2)) // 1)


def normalize_bbox(raw: Sequence[float], page_w: int, page_h: int, doc_id: str = "") -> BBox:
    """Map a pixel box onto the 0-1000 page scale.

    Rounding is half-up on the exact quotient, so results do not depend on
    float representation of the inputs' ratio.
    """
    ctx = f"{doc_id}: " if doc_id else ""
    if page_w <= 0 or page_h <= 0:
        raise InvalidBoxError(f"{ctx}page size must be positive, got {page_w}x{page_h}")
    if len(raw) != 4:
        raise InvalidBoxError(f"{ctx}expected 4 coordinates, got {list(raw)!r}")
    x1, y1, x2, y2 = (Fraction(str(v)) if isinstance(v, float) else Fraction(v) for v in raw)
    if not (0 <= x1 <= x2 <= page_w and 0 <= y1 <= y2 <= page_h):
        raise InvalidBoxError(
            f"{ctx}box {list(raw)} inverted or outside {page_w}x{page_h} page"
        )

    def scale(v: Fraction, dim: int) -> int:
        return min(SCALE, max(0, _round_half_up(v * SCALE / dim)))

    return BBox(scale(x1, page_w), scale(y1, page_h), scale(x2, page_w), scale(y2, page_h))


class NoRelevantSegmentError(ValueError):
    pass


def union_bbox(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    if not boxes:
        raise NoRelevantSegmentError("cannot take the union of zero boxes: no relevant segment matched")
    return BBox(
        min(b.x1 for b in boxes),
        min(b.y1 for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
    )


def reading_order_sort(segments: Iterable) -> list:
    """Stable top-to-bottom, left-to-right order by box corner.

    Works on anything with a ``box`` attribute.
    """
    return sorted(segments, key=lambda s: (s.box.y1, s.box.x1))


# --- serialization ------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "<": "\\<", ">": "\\>", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "<": "<", ">": ">", "n": "\n"}
_SEGMENT_RE = re.compile(r"<\[(\d+),(\d+),(\d+),(\d+)\], (.*)>", re.S)


def escape_text(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def unescape_text(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, None)
        if nxt not in _UNESCAPES:
            raise ValueError(f"bad escape sequence \\{nxt or ''} in {text!r}")
        out.append(_UNESCAPES[nxt])
    return "".join(out)


def serialize_segment(seg: TextSegment) -> str:
    """Render a segment as ``<[x1,y1,x2,y2], text>``."""
    return f"<{seg.box}, {escape_text(seg.text)}>"


def parse_segment(line: str) -> TextSegment:
    m = _SEGMENT_RE.fullmatch(line)
    if m is None:
        raise ValueError(f"not a serialized segment: {line!r}")
    body = m.group(5)
    # an unescaped '>' can only be the closing bracket
    if re.search(r"(?<!\\)(?:\\\\)*>", body):
        raise ValueError(f"unescaped '>' in segment text: {line!r}")
    box = BBox(*(int(g) for g in m.group(1, 2, 3, 4)))
    return TextSegment(unescape_text(body), box)


_LAYOUT_ENTRY_RE = re.compile(r'\{text:(".*"), box:\[(\d+),(\d+),(\d+),(\d+)\]\}')


def layout_text_entry(seg: TextSegment) -> str:
    """``{text:"...", box:[x1,y1,x2,y2]}`` with JSON string escaping."""
    return f"{{text:{json.dumps(seg.text, ensure_ascii=False)}, box:{seg.box}}}"


def render_layout_text(segments: Iterable[TextSegment]) -> str:
    return "\n".join(layout_text_entry(s) for s in segments)


def parse_layout_text(body: str) -> list[TextSegment]:
    """Recover segments from layout-text lines; other lines are ignored."""
    out = []
    for line in body.split("\n"):
        m = _LAYOUT_ENTRY_RE.fullmatch(line)
        if m:
            out.append(TextSegment(json.loads(m.group(1)), BBox(*(int(g) for g in m.group(2, 3, 4, 5)))))
    return out


# --- truncation ---------------------------------------------------------------

def word_count(text: str) -> int:
    return len(text.split())


def truncate_document(doc: DocumentRecord, max_tokens: int = MAX_DOC_TOKENS) -> DocumentRecord:
    """Keep the longest reading-order prefix of whole segments within budget.

    Tokens are whitespace-split words. If the first segment alone is over
    budget it is kept and the record is flagged ``segment_overflow``.
    """
    segments = reading_order_sort(doc.segments)
    kept = []
    used = 0
    for seg in segments:
        n = word_count(seg.text)
        if used + n > max_tokens:
            break
        kept.append(seg)
        used += n
    if not kept and segments:
        return replace(doc, segments=(segments[0],)).with_flag("segment_overflow")
    out = replace(doc, segments=tuple(kept))
    if len(kept) < len(segments):
        out = out.with_flag("truncated")
    return out
