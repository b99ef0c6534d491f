"""Annotation-to-instruction (A2I): turn labels and boxes into grounded MLLM instructions."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .ingest import BBox, ImageRecord

T1, T2, T3 = "T1", "T2", "T3"

DEFAULT_TEMPLATES = {
    T1: "Describe this image with {slot} in detail:",
    T2: "Describe this image with {slot} in detail:",
    T3: "Where {verb} the {slot}? Answer:",
}
DEFAULT_BOX_FORMAT = "<box>{x0},{y0},{x1},{y1}</box>"
# instruction used for the second MLLM, which gets no annotations
DETAIL_INSTRUCTION = "Describe this image in detail"


class InstructionError(ValueError):
    pass


@dataclass(frozen=True)
class Instruction:
    image_id: str
    template_id: str
    text: str
    bbox_payload: tuple[tuple[float, float, float, float], ...] | None = None

    def __post_init__(self):
        if self.template_id == T1 and self.bbox_payload:
            raise InstructionError("T1 instructions carry no boxes")
        if self.template_id in (T2, T3) and not self.bbox_payload:
            raise InstructionError(f"{self.template_id} needs at least one box")


def _norm3(v: float, extent: float) -> Decimal:
    q = (Decimal(str(v)) / Decimal(str(extent))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP)
    return min(max(q, Decimal("0.000")), Decimal("1.000"))


def normalize_bbox(bbox: BBox, width: float, height: float) -> tuple[Decimal, Decimal, Decimal, Decimal]:
    x0, x1 = _ordered(_norm3(bbox.xmin, width), _norm3(bbox.xmax, width))
    y0, y1 = _ordered(_norm3(bbox.ymin, height), _norm3(bbox.ymax, height))
    return x0, y0, x1, y1


def _ordered(lo: Decimal, hi: Decimal) -> tuple[Decimal, Decimal]:
    # sub-resolution boxes would collapse to zero width after rounding
    step = Decimal("0.001")
    if hi <= lo:
        if lo + step <= Decimal("1.000"):
            hi = lo + step
        else:
            lo = hi - step
    return lo, hi


def encode_bbox_for_prompt(bbox: BBox, width: float, height: float, box_format: str = DEFAULT_BOX_FORMAT) -> str:
    """Normalized ``<box>x0,y0,x1,y1</box>``, three decimals, half-up rounding."""
    x0, y0, x1, y1 = normalize_bbox(bbox, width, height)
    return box_format.format(x0=f"{x0:.3f}", y0=f"{y0:.3f}", x1=f"{x1:.3f}", y1=f"{y1:.3f}")


def singular_plural_verb(boxes: Sequence[BBox]) -> str:
    if not boxes:
        raise InstructionError("no boxes")
    return "is" if len(boxes) == 1 else "are"


def _distinct_labels(boxes: Sequence[BBox]) -> list[str]:
    seen: list[str] = []
    for b in boxes:
        name = b.label.replace("_", " ")
        if name not in seen:
            seen.append(name)
    return seen


def a2i(
    record: ImageRecord,
    templates: Mapping[str, str] | None = None,
    box_format: str = DEFAULT_BOX_FORMAT,
) -> list[Instruction]:
    """Pick templates by annotation shape.

    class only -> [T1(class)]; one or two boxes -> [T2, T3] with class+box
    slots; more boxes -> [T1(distinct classes, comma-joined)].
    """
    tpl = {**DEFAULT_TEMPLATES, **(templates or {})}
    boxes = record.bboxes
    if not boxes:
        if not record.class_label:
            raise InstructionError(f"{record.id}: record has neither a class label nor boxes")
        slot = record.class_label.replace("_", " ")
        return [Instruction(record.id, T1, tpl[T1].format(slot=slot, verb=""))]
    if len(boxes) > 2:
        slot = ", ".join(_distinct_labels(boxes))
        return [Instruction(record.id, T1, tpl[T1].format(slot=slot, verb=""))]
    slot = " and ".join(
        f"{b.label.replace('_', ' ')} {encode_bbox_for_prompt(b, record.width, record.height, box_format)}"
        for b in boxes
    )
    payload = tuple(tuple(float(v) for v in normalize_bbox(b, record.width, record.height)) for b in boxes)
    verb = singular_plural_verb(boxes)
    return [
        Instruction(record.id, T2, tpl[T2].format(slot=slot, verb=verb), payload),
        Instruction(record.id, T3, tpl[T3].format(slot=slot, verb=verb), payload),
    ]
