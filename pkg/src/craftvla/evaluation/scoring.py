"""Rule-based scoring of grounding predictions in normalized coordinates."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable

from ..errors import DataError, GroundingParseError
from ..grounding import Annotation, parse_grounding

DEFAULT_POINT_THRESHOLD = 25.0


class Outcome(str, enum.Enum):
    HIT = "hit"
    MISS = "miss"
    PARSE_FAILURE = "parse_failure"


@dataclass(frozen=True)
class GroundingCase:
    case_id: str
    target: str
    truth: Annotation
    prediction: str
    image_ref: str = ""

    def __post_init__(self):
        if not self.truth.normalized:
            raise DataError(f"case {self.case_id}: ground truth must be normalized")

    @classmethod
    def from_record(cls, rec: dict) -> "GroundingCase":
        """``truth`` may be a grounding answer string or an annotation record."""
        truth = rec["truth"]
        if isinstance(truth, str):
            parsed = parse_grounding(truth)
            if len(parsed) != 1:
                raise DataError(f"case {rec.get('id')}: ground truth must hold exactly one annotation")
            truth = parsed[0]
        else:
            truth = Annotation.from_record(truth)
        return cls(str(rec["id"]), rec.get("target", truth.name), truth, rec["prediction"], rec.get("image_ref", ""))


def _inside(point, box) -> bool:
    (x1, y1), (x2, y2) = box.points
    x, y = point
    return x1 <= x <= x2 and y1 <= y <= y2


def box_iou(a: Annotation, b: Annotation) -> float:
    """IoU of two boxes over integer cells (corners inclusive)."""
    (ax1, ay1), (ax2, ay2) = a.points
    (bx1, by1), (bx2, by2) = b.points
    iw = min(ax2, bx2) - max(ax1, bx1) + 1
    ih = min(ay2, by2) - max(ay1, by1) + 1
    inter = max(0, iw) * max(0, ih)
    area = lambda x1, y1, x2, y2: (x2 - x1 + 1) * (y2 - y1 + 1)  # noqa: E731
    union = area(ax1, ay1, ax2, ay2) + area(bx1, by1, bx2, by2) - inter
    return inter / union


def score_grounding(
    case: GroundingCase,
    point_threshold: float = DEFAULT_POINT_THRESHOLD,
    bbox_mode: str = "center",
    iou_threshold: float = 0.5,
) -> Outcome:
    """Score one prediction.

    Against a ground-truth box, any predicted point inside it (bounds
    inclusive) is a hit; a predicted box hits when its center is inside, or
    with ``bbox_mode="iou"`` when IoU reaches ``iou_threshold``. Against
    ground-truth points, a hit needs a predicted point (or box center) within
    ``point_threshold`` normalized units of one of them.
    """
    if bbox_mode not in ("center", "iou"):
        raise ValueError(f"bbox_mode must be 'center' or 'iou', got {bbox_mode!r}")
    try:
        predicted = parse_grounding(case.prediction)
    except GroundingParseError:
        return Outcome.PARSE_FAILURE

    truth = case.truth
    for pred in predicted:
        if truth.kind == "bbox":
            if pred.kind == "point":
                hit = any(_inside(p, truth) for p in pred.points)
            elif bbox_mode == "iou":
                hit = box_iou(pred, truth) >= iou_threshold
            else:
                hit = _inside(pred.center(), truth)
        else:
            candidates = pred.points if pred.kind == "point" else [pred.center()]
            hit = any(math.dist(c, t) <= point_threshold for c in candidates for t in truth.points)
        if hit:
            return Outcome.HIT
    return Outcome.MISS


@dataclass(frozen=True)
class GroundingReport:
    hits: int
    misses: int
    parse_failures: int

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.parse_failures

    @property
    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "hits": self.hits,
            "misses": self.misses,
            "parse_failures": self.parse_failures,
            "accuracy": self.accuracy,
        }


def grounding_accuracy(cases: Iterable[GroundingCase], **kwargs) -> GroundingReport:
    """Parse failures count against accuracy like any other miss."""
    counts = {o: 0 for o in Outcome}
    for case in cases:
        counts[score_grounding(case, **kwargs)] += 1
    return GroundingReport(counts[Outcome.HIT], counts[Outcome.MISS], counts[Outcome.PARSE_FAILURE])


def load_grounding_cases(path) -> list[GroundingCase]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(GroundingCase.from_record(json.loads(line)))
            except (KeyError, TypeError, json.JSONDecodeError, DataError) as exc:
                raise DataError(f"line {lineno}: bad grounding case: {exc}") from None
    return out
