"""Axis-aligned box arithmetic: IoU, ltrb offsets, centerness, objectness and NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .errors import DegenerateInputError, InvalidArgumentError


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidArgumentError(f"box coordinates must be finite: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateInputError(f"box must have positive area: {coords}")

    @classmethod
    def from_list(cls, xs: Sequence[float]) -> "Box":
        if len(xs) != 4:
            raise InvalidArgumentError(f"box needs 4 coordinates, got {len(xs)}")
        return cls(*(float(x) for x in xs))

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


@dataclass(frozen=True)
class LtrbOffsets:
    l: float
    t: float
    r: float
    b: float

    def __post_init__(self):
        if min(self.l, self.t, self.r, self.b) < 0:
            raise InvalidArgumentError(f"ltrb offsets must be non-negative: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.l, self.t, self.r, self.b)


@dataclass(frozen=True)
class Proposal:
    """A scored region proposal; ``objectness`` is always sqrt(centerness * iou_score)."""

    box: Box
    centerness: float
    iou_score: float
    objectness: float


def boxes_array(boxes: Iterable[Box]) -> np.ndarray:
    arr = np.array([b.as_list() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: Sequence[Box] | np.ndarray, b: Sequence[Box] | np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a_arr = a if isinstance(a, np.ndarray) else boxes_array(a)
    b_arr = b if isinstance(b, np.ndarray) else boxes_array(b)
    if len(a_arr) == 0 or len(b_arr) == 0:
        return np.zeros((len(a_arr), len(b_arr)))
    return kernels.iou_matrix(a_arr, b_arr)


def ltrb_encode(location: tuple[float, float], box: Box) -> LtrbOffsets:
    x, y = location
    if not (box.x1 < x < box.x2 and box.y1 < y < box.y2):
        raise DegenerateInputError(f"location {location} is not strictly inside {box.as_list()}")
    return LtrbOffsets(x - box.x1, y - box.y1, box.x2 - x, box.y2 - y)


def ltrb_decode(location: tuple[float, float], offsets: LtrbOffsets) -> Box:
    x, y = location
    if offsets.l + offsets.r <= 0 or offsets.t + offsets.b <= 0:
        raise DegenerateInputError(f"offsets {offsets.as_tuple()} decode to a zero-area box")
    return Box(x - offsets.l, y - offsets.t, x + offsets.r, y + offsets.b)


def centerness(offsets: LtrbOffsets) -> float:
    l, t, r, b = offsets.as_tuple()
    if l + r <= 0 or t + b <= 0:
        raise DegenerateInputError("centerness undefined for zero extent")
    return math.sqrt((min(l, r) / max(l, r)) * (min(t, b) / max(t, b)))


def objectness(c: float, b: float) -> float:
    if not (0.0 <= c <= 1.0 and 0.0 <= b <= 1.0):
        raise InvalidArgumentError(f"objectness inputs must lie in [0, 1], got c={c}, b={b}")
    return math.sqrt(c * b)


def make_proposal(box: Box, c: float, b: float) -> Proposal:
    return Proposal(box, c, b, objectness(c, b))


def descending_order(scores) -> np.ndarray:
    """Indices by descending score; equal scores keep input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def nms(detections: Sequence[tuple[Box, float]], iou_thresh: float) -> list[int]:
    """Greedy NMS; returns kept input indices in descending-score order.

    A box is suppressed when its IoU with an already kept box is >= ``iou_thresh``.
    """
    if not detections:
        return []
    scores = np.array([s for _, s in detections], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise InvalidArgumentError("nms scores must be finite")
    order = descending_order(scores)
    boxes = boxes_array(detections[i][0] for i in order)
    return [int(order[k]) for k in kernels.nms_sorted(boxes, float(iou_thresh))]
