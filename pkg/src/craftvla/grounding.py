"""Grounding annotations: [0, 1000) coordinate codec, answer grammar and
annotation-aware augmentation geometry.

Only geometry is computed here. Pixel resampling is left to whatever image
backend consumes the :class:`AffineAugmentSpec`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, DegenerateAnnotation, GroundingParseError

NORM_RANGE = 1000

OBJECT_REF_START = "<|object_ref_start|>"
OBJECT_REF_END = "<|object_ref_end|>"
BBOX_START = "<|bbox_start|>"
BBOX_END = "<|bbox_end|>"
POINT_START = "<|point_start|>"
POINT_END = "<|point_end|>"


def normalize_coord(x: float, dim: float) -> int:
    """Pixel coordinate -> integer cell in [0, 1000)."""
    if dim <= 0:
        raise DataError(f"dimension must be positive, got {dim}")
    if not 0 <= x < dim:
        raise DataError(f"coordinate {x} outside [0, {dim})")
    return min(NORM_RANGE - 1, math.floor(x * NORM_RANGE / dim))


def denormalize_coord(n: int, dim: float) -> float:
    """Integer cell -> pixel coordinate of the cell center."""
    if dim <= 0:
        raise DataError(f"dimension must be positive, got {dim}")
    if isinstance(n, bool) or int(n) != n or not 0 <= n < NORM_RANGE:
        raise DataError(f"normalized coordinate {n!r} outside [0, {NORM_RANGE})")
    return (int(n) + 0.5) * dim / NORM_RANGE


@dataclass(frozen=True)
class Annotation:
    """A named point list or bounding box.

    ``kind`` is ``"point"`` or ``"bbox"``; a bbox stores its two corners in
    ``points``. ``size`` is ``(width, height)`` for pixel space and ``None``
    for normalized space, where coordinates are integers in [0, 1000).
    """

    name: str
    kind: str
    points: tuple
    size: tuple | None = None

    def __post_init__(self):
        pts = tuple((p[0], p[1]) for p in self.points)
        object.__setattr__(self, "points", pts)
        if self.kind not in ("point", "bbox"):
            raise DataError(f"annotation kind must be 'point' or 'bbox', got {self.kind!r}")
        if self.kind == "point" and not pts:
            raise DataError("point annotation needs at least one point")
        if self.kind == "bbox":
            if len(pts) != 2:
                raise DataError("bbox annotation needs exactly two corners")
            (x1, y1), (x2, y2) = pts
            if x1 > x2 or y1 > y2:
                raise DataError(f"bbox corners out of order: {pts}")
        if self.size is None:
            for x, y in pts:
                for v in (x, y):
                    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v < NORM_RANGE:
                        raise DataError(f"normalized coordinate {v!r} must be an integer in [0, {NORM_RANGE})")
            object.__setattr__(self, "points", tuple((int(x), int(y)) for x, y in pts))
        else:
            w, h = self.size
            object.__setattr__(self, "size", (w, h))
            for x, y in pts:
                if not (0 <= x < w and 0 <= y < h):
                    raise DataError(f"pixel point ({x}, {y}) outside {w}x{h} frame")

    @property
    def normalized(self) -> bool:
        return self.size is None

    @classmethod
    def bbox(cls, name, x1, y1, x2, y2, size=None):
        return cls(name, "bbox", ((x1, y1), (x2, y2)), size)

    @classmethod
    def point(cls, name, *points, size=None):
        return cls(name, "point", tuple(points), size)

    def center(self) -> tuple:
        if self.kind == "bbox":
            (x1, y1), (x2, y2) = self.points
            return ((x1 + x2) / 2, (y1 + y2) / 2)
        xs, ys = zip(*self.points)
        return (sum(xs) / len(xs), sum(ys) / len(ys))

    def to_record(self) -> dict:
        rec = {"name": self.name, "kind": self.kind, "points": [list(p) for p in self.points]}
        if self.size is not None:
            rec["size"] = list(self.size)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Annotation":
        size = rec.get("size")
        return cls(rec.get("name", ""), rec["kind"], tuple(tuple(p) for p in rec["points"]), tuple(size) if size else None)


def normalize_annotation(ann: Annotation) -> Annotation:
    if ann.normalized:
        return ann
    w, h = ann.size
    pts = tuple((normalize_coord(x, w), normalize_coord(y, h)) for x, y in ann.points)
    return Annotation(ann.name, ann.kind, pts, None)


def denormalize_annotation(ann: Annotation, size: tuple) -> Annotation:
    if not ann.normalized:
        raise DataError("annotation is already in pixel space")
    w, h = size
    pts = tuple((denormalize_coord(x, w), denormalize_coord(y, h)) for x, y in ann.points)
    return Annotation(ann.name, ann.kind, pts, (w, h))


# ---------------------------------------------------------------- grammar


_INT = r"\s*([^\s(),]*)\s*"
_PAIR_RE = re.compile(r"\s*\(" + _INT + "," + _INT + r"\)\s*")


def _parse_pairs(body: str, where: int) -> list[tuple[int, int]]:
    pairs = []
    pos = 0
    while True:
        m = _PAIR_RE.match(body, pos)
        if m is None:
            raise GroundingParseError(f"expected '(x,y)' at character {where + pos}: {body[pos:pos + 20]!r}")
        coords = []
        for raw in m.groups():
            if not re.fullmatch(r"\d+", raw):
                raise GroundingParseError(f"coordinate {raw!r} is not a non-negative integer")
            v = int(raw)
            if v >= NORM_RANGE:
                raise GroundingParseError(f"coordinate {v} outside [0, {NORM_RANGE})")
            coords.append(v)
        pairs.append((coords[0], coords[1]))
        pos = m.end()
        if pos == len(body):
            return pairs
        if body[pos] != ",":
            raise GroundingParseError(f"expected ',' at character {where + pos}")
        pos += 1


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def parse_grounding(text: str) -> list[Annotation]:
    """Parse one or more ``[<|object_ref_start|>NAME<|object_ref_end|>]<|bbox_start|>...`` blocks.

    Coordinates are normalized integers. The object reference is optional;
    an omitted one yields an empty name.
    """
    out = []
    pos = _skip_ws(text, 0)
    if pos == len(text):
        raise GroundingParseError("no grounding annotation found")
    while pos < len(text):
        name = ""
        if text.startswith(OBJECT_REF_START, pos):
            start = pos + len(OBJECT_REF_START)
            end = text.find(OBJECT_REF_END, start)
            if end == -1:
                raise GroundingParseError(f"unterminated {OBJECT_REF_START} at character {pos}")
            name = text[start:end].strip()
            if "<|" in name:
                raise GroundingParseError(f"delimiter inside object name at character {start}")
            pos = _skip_ws(text, end + len(OBJECT_REF_END))
        if text.startswith(BBOX_START, pos):
            kind, opener, closer = "bbox", BBOX_START, BBOX_END
        elif text.startswith(POINT_START, pos):
            kind, opener, closer = "point", POINT_START, POINT_END
        else:
            raise GroundingParseError(f"expected {BBOX_START} or {POINT_START} at character {pos}")
        start = pos + len(opener)
        end = text.find(closer, start)
        if end == -1:
            raise GroundingParseError(f"unterminated {opener} at character {pos}")
        if "<|" in text[start:end]:
            raise GroundingParseError(f"unbalanced delimiters after character {start}")
        pairs = _parse_pairs(text[start:end], start)
        if kind == "bbox":
            if len(pairs) != 2:
                raise GroundingParseError(f"bbox needs two corners, got {len(pairs)}")
            (x1, y1), (x2, y2) = pairs
            if x1 > x2 or y1 > y2:
                raise GroundingParseError(f"bbox corners out of order: {pairs}")
        out.append(Annotation(name, kind, tuple(pairs)))
        pos = _skip_ws(text, end + len(closer))
    return out


def _fmt_pairs(points) -> str:
    return ",".join(f"({x},{y})" for x, y in points)


def emit_grounding(annotations: Sequence[Annotation]) -> str:
    """Canonical answer string; point lists are sorted by (y, x)."""
    parts = []
    for ann in annotations:
        if not ann.normalized:
            raise DataError("emit_grounding needs normalized annotations")
        if ann.name:
            parts.append(f"{OBJECT_REF_START}{ann.name}{OBJECT_REF_END}")
        if ann.kind == "bbox":
            parts.append(f"{BBOX_START}{_fmt_pairs(ann.points)}{BBOX_END}")
        else:
            pts = sorted(ann.points, key=lambda p: (p[1], p[0]))
            parts.append(f"{POINT_START}{_fmt_pairs(pts)}{POINT_END}")
    return "".join(parts)


# ----------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AffineAugmentSpec:
    """Geometric augmentation.

    Applied as: optional horizontal flip (``x -> W - x``), then scale, shear
    and rotation about the image center, then translation. Angles are in
    degrees; positive rotation turns the +x axis toward +y (clockwise on
    screen, since y points down). Shear slants x by ``tan(shear) * y``.
    """

    translate: tuple = (0.0, 0.0)
    rotate: float = 0.0
    scale: float = 1.0
    shear: float = 0.0
    hflip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "translate", tuple(float(v) for v in self.translate))
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DataError(f"scale must be positive, got {self.scale}")
        for v in (*self.translate, self.rotate, self.shear):
            if not math.isfinite(v):
                raise DataError("augmentation parameters must be finite")

    @property
    def is_identity(self) -> bool:
        return self == AffineAugmentSpec()

    def matrix(self, in_size: tuple, out_size: tuple | None = None) -> np.ndarray:
        """3x3 homogeneous map from input pixels to output pixels."""
        w, h = in_size
        ow, oh = out_size or in_size
        flip = np.eye(3)
        if self.hflip:
            flip = np.array([[-1.0, 0.0, w], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        to_origin = np.array([[1.0, 0.0, -w / 2], [0.0, 1.0, -h / 2], [0.0, 0.0, 1.0]])
        th = math.radians(self.rotate)
        rot = np.array([[math.cos(th), -math.sin(th), 0.0], [math.sin(th), math.cos(th), 0.0], [0.0, 0.0, 1.0]])
        shear = np.array([[1.0, math.tan(math.radians(self.shear)), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        scale = np.diag([self.scale, self.scale, 1.0])
        back = np.array([[1.0, 0.0, ow / 2 + self.translate[0]], [0.0, 1.0, oh / 2 + self.translate[1]], [0.0, 0.0, 1.0]])
        return back @ rot @ shear @ scale @ to_origin @ flip


@dataclass(frozen=True)
class PhotometricAugmentSpec:
    """Color jitter deltas. Carries no geometry, so annotations pass through untouched."""

    hue: float = 0.0
    saturation: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0

    def __post_init__(self):
        for v in (self.hue, self.saturation, self.brightness, self.contrast):
            if not math.isfinite(v):
                raise DataError("photometric deltas must be finite")


def compose(second, first, sizes: Sequence[tuple]) -> np.ndarray:
    """Matrix for applying ``first`` then ``second``.

    ``sizes`` is ``(in_size, mid_size, out_size)``; either argument may
    already be a 3x3 matrix.
    """
    in_size, mid_size, out_size = sizes
    m1 = first if isinstance(first, np.ndarray) else first.matrix(in_size, mid_size)
    m2 = second if isinstance(second, np.ndarray) else second.matrix(mid_size, out_size)
    return m2 @ m1


def apply_affine(matrix: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homog = np.c_[pts, np.ones(len(pts))]
    return (homog @ matrix.T)[:, :2]


def _clamp(v: float, dim: float) -> float:
    return min(max(v, 0.0), math.nextafter(dim, 0.0))


def transform_annotation(ann: Annotation, spec, out_size: tuple | None = None) -> Annotation:
    """Map a pixel-space annotation through an augmentation.

    ``spec`` is an :class:`AffineAugmentSpec`, a 3x3 matrix, or a
    :class:`PhotometricAugmentSpec` (returned unchanged). Boxes become the
    axis-aligned box around their four mapped corners. Results are clamped
    into the output frame; :class:`DegenerateAnnotation` is raised when
    nothing of the annotation remains inside it.
    """
    if ann.normalized:
        raise DataError("transform_annotation needs a pixel-space annotation")
    out_size = tuple(out_size or ann.size)
    if isinstance(spec, PhotometricAugmentSpec):
        return ann
    if isinstance(spec, AffineAugmentSpec):
        if spec.is_identity and out_size == ann.size:
            return ann
        matrix = spec.matrix(ann.size, out_size)
    else:
        matrix = np.asarray(spec, dtype=np.float64)
    ow, oh = out_size

    if ann.kind == "bbox":
        (x1, y1), (x2, y2) = ann.points
        mapped = apply_affine(matrix, [(x1, y1), (x2, y1), (x1, y2), (x2, y2)])
        lo, hi = mapped.min(axis=0), mapped.max(axis=0)
        if hi[0] < 0 or hi[1] < 0 or lo[0] >= ow or lo[1] >= oh:
            raise DegenerateAnnotation(f"{ann.name!r} bbox left the {ow}x{oh} frame")
        pts = ((_clamp(lo[0], ow), _clamp(lo[1], oh)), (_clamp(hi[0], ow), _clamp(hi[1], oh)))
        return Annotation(ann.name, "bbox", pts, out_size)

    mapped = apply_affine(matrix, ann.points)
    inside = (mapped[:, 0] >= 0) & (mapped[:, 0] < ow) & (mapped[:, 1] >= 0) & (mapped[:, 1] < oh)
    if not inside.any():
        raise DegenerateAnnotation(f"{ann.name!r} points all left the {ow}x{oh} frame")
    pts = tuple((_clamp(x, ow), _clamp(y, oh)) for x, y in mapped)
    return Annotation(ann.name, "point", pts, out_size)


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges; each jitter is drawn uniformly from [-r, r]."""

    translate_frac: float = 0.1
    rotate: float = 10.0
    scale: float = 0.1
    shear: float = 5.0
    hflip_prob: float = 0.1
    hue: float = 0.05
    saturation: float = 0.2
    brightness: float = 0.2
    contrast: float = 0.2


def sample_augmentation(rng: np.random.Generator, phase: str, size: tuple, ranges: AugmentRanges = AugmentRanges()):
    """Draw ``(photometric, affine)`` specs for a training phase.

    ``"vision_language"`` uses the full geometric set; ``"action"`` keeps
    only color jitter and translation.
    """
    if phase not in ("vision_language", "action"):
        raise ValueError(f"unknown phase {phase!r}")
    w, h = size
    u = lambda r: float(rng.uniform(-r, r))  # noqa: E731
    photo = PhotometricAugmentSpec(u(ranges.hue), u(ranges.saturation), u(ranges.brightness), u(ranges.contrast))
    translate = (u(ranges.translate_frac * w), u(ranges.translate_frac * h))
    if phase == "action":
        return photo, AffineAugmentSpec(translate=translate)
    affine = AffineAugmentSpec(
        translate=translate,
        rotate=u(ranges.rotate),
        scale=1.0 + u(ranges.scale),
        shear=u(ranges.shear),
        hflip=bool(rng.random() < ranges.hflip_prob),
    )
    return photo, affine
