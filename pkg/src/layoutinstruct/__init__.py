"""Layout instruction corpora and zero-shot document-understanding evaluation."""
from .core import (
    BBox,
    DocumentRecord,
    InstructionRecord,
    LayoutCoTRecord,
    LayoutRegion,
    TableAnnotation,
    TableCell,
    TextSegment,
    normalize_bbox,
    parse_segment,
    reading_order_sort,
    serialize_segment,
    truncate_document,
    union_bbox,
)

__version__ = "0.1.0"
