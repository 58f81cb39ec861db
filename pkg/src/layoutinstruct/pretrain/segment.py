"""Segment-level self-supervised tasks: masked text, zeroed positions, geometry."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import replace
from fractions import Fraction
from typing import Optional

from ..core import (
    MASK_TOKEN,
    ZERO_BOX,
    BBox,
    DocumentRecord,
    InstructionRecord,
    serialize_segment,
)
from ..seeding import rng_for
from ._common import make_record, pick_question

DEFAULT_MASK_RATE = 0.15
# counterclockwise from +x; index k covers angles within 22.5 degrees of 45*k
DIRECTIONS = (
    "right", "upper right", "up", "upper left",
    "left", "lower left", "down", "lower right",
)


def mask_count(n_segments: int, mask_rate: float = DEFAULT_MASK_RATE) -> int:
    """max(1, round_half_up(rate * n)), computed on the decimal value of ``rate``."""
    share = Fraction(str(mask_rate)) * n_segments
    return max(1, int((share + Fraction(1, 2)) // 1))


def _center_delta(a: BBox, b: BBox) -> tuple[int, int]:
    """Vector from a's center to b's center in half-units, with +y pointing up."""
    (ax, ay), (bx, by) = a.center2, b.center2
    return bx - ax, ay - by


def direction_label(a: BBox, b: BBox) -> str:
    """Eight-way compass label of b's center as seen from a's center.

    Sector tests are exact integer comparisons against tan(22.5 deg) =
    sqrt(2) - 1: |dy| < |dx| tan(22.5) <=> (|dx| + |dy|)^2 < 2 dx^2. With
    integer deltas equality needs dx = dy = 0, so sector boundaries are never
    hit and the counterclockwise tie rule never has to fire.
    """
    dx, dy = _center_delta(a, b)
    if dx == 0 and dy == 0:
        raise ValueError("coincident centers have no direction")
    adx, ady = abs(dx), abs(dy)
    s = (adx + ady) ** 2
    if s < 2 * adx * adx:
        return "right" if dx > 0 else "left"
    if s < 2 * ady * ady:
        return "up" if dy > 0 else "down"
    if dx > 0:
        return "upper right" if dy > 0 else "lower right"
    return "upper left" if dy > 0 else "lower left"


def center_distance(a: BBox, b: BBox) -> float:
    dx, dy = _center_delta(a, b)
    return math.hypot(dx, dy) / 2


def rounded_distance(a: BBox, b: BBox) -> int:
    """Center distance rounded half-up, exactly.

    With doubled coordinates d = sqrt(S) / 2, and floor(d + 1/2) only jumps
    where sqrt(S) crosses an odd integer, so isqrt is enough.
    """
    dx, dy = _center_delta(a, b)
    return (math.isqrt(dx * dx + dy * dy) + 1) // 2


def _quote_list(texts: list[str]) -> str:
    quoted = [f'"{t}"' for t in texts]
    if len(quoted) == 1:
        return quoted[0]
    return ", ".join(quoted[:-1]) + " and " + quoted[-1]


def build_mvlm(doc: DocumentRecord, seed: int, mask_rate: float = DEFAULT_MASK_RATE
               ) -> Optional[InstructionRecord]:
    """Replace a seeded sample of segments by ``[MASK]`` and ask for them back."""
    if not 0 < mask_rate < 1:
        raise ValueError(f"mask_rate must be in (0, 1), got {mask_rate}")
    segs = list(doc.segments)
    n = len(segs)
    if n < 2:
        return None
    k = mask_count(n, mask_rate)
    rng = rng_for(seed)
    picked = sorted(rng.sample(range(n), k))
    inputs = list(segs)
    for i in picked:
        inputs[i] = replace(segs[i], text=MASK_TOKEN, masked_text=True)
    question = pick_question(rng, "mvlm")
    answer = "\n".join(serialize_segment(segs[i]) for i in picked)
    return make_record("mvlm", doc, question, answer, seed, segments=inputs)


def build_mask_position(doc: DocumentRecord, seed: int, k: int = 1) -> Optional[InstructionRecord]:
    """Zero the boxes of ``k`` segments and ask for their original coordinates.

    Targets are drawn in a seeded order; a candidate whose text repeats an
    already chosen target is passed over so the question stays unambiguous.
    """
    segs = list(doc.segments)
    n = len(segs)
    if k < 1 or n <= k:
        return None
    rng = rng_for(seed)
    order = list(range(n))
    rng.shuffle(order)
    chosen: list[int] = []
    seen: set[str] = set()
    for i in order:
        seg = segs[i]
        if seg.text in seen or seg.box.is_zero:
            continue
        chosen.append(i)
        seen.add(seg.text)
        if len(chosen) == k:
            break
    if len(chosen) < k:
        return None
    chosen.sort()
    inputs = list(segs)
    for i in chosen:
        inputs[i] = replace(segs[i], box=ZERO_BOX, zeroed_box=True)
    question = pick_question(rng, "mask_pos", texts=_quote_list([segs[i].text for i in chosen]))
    answer = "\n".join(serialize_segment(segs[i]) for i in chosen)
    return make_record("mask_pos", doc, question, answer, seed, segments=inputs)


_PAIR_ATTEMPTS = 32


def geometric_answer(text_a: str, text_b: str, direction: str, distance: int) -> str:
    return (
        f'The direction from "{text_a}" to "{text_b}" is {direction}, '
        f"and the distance between them is {distance}."
    )


def build_geometric(doc: DocumentRecord, seed: int) -> Optional[InstructionRecord]:
    """Direction and distance between the centers of two segments.

    Only segments whose text occurs once on the page are eligible, since the
    question names them by text.
    """
    counts = Counter(s.text for s in doc.segments)
    cands = [s for s in doc.segments if counts[s.text] == 1]
    if len(cands) < 2:
        return None
    rng = rng_for(seed)
    pair = None
    for _ in range(_PAIR_ATTEMPTS):
        a, b = rng.sample(cands, 2)
        if a.box.center2 != b.box.center2:
            pair = (a, b)
            break
    if pair is None:
        pairs = [(a, b) for a in cands for b in cands
                 if a is not b and a.box.center2 != b.box.center2]
        if not pairs:
            return None
        pair = rng.choice(pairs)
    a, b = pair
    question = pick_question(rng, "geometric", a=a.text, b=b.text)
    answer = geometric_answer(a.text, b.text, direction_label(a.box, b.box),
                              rounded_distance(a.box, b.box))
    return make_record("geometric", doc, question, answer, seed)
