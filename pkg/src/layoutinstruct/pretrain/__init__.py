"""Layout-aware pretraining instruction builders (document, region, segment)."""
from .document import TLR_FORMATS, build_ddd, build_tlr, parse_tlr_answer, render_tlr_answer
from .region import build_dla_classify, build_dla_locate, build_tu
from .segment import (
    DIRECTIONS,
    build_geometric,
    build_mask_position,
    build_mvlm,
    center_distance,
    direction_label,
    mask_count,
    rounded_distance,
)

__all__ = [
    "TLR_FORMATS", "build_ddd", "build_tlr", "parse_tlr_answer", "render_tlr_answer",
    "build_dla_classify", "build_dla_locate", "build_tu",
    "DIRECTIONS", "build_geometric", "build_mask_position", "build_mvlm",
    "center_distance", "direction_label", "mask_count", "rounded_distance",
]
