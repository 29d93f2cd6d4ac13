"""Localization-quality proposal machinery.

Covers anchor labelling and minibatch sampling, the two-stage regression
targets (ltrb + centerness, then normalised xywh + IoU), the weighted
four-term proposal loss, objectness scoring and pseudo-unknown selection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .geometry import (
    Box,
    LtrbOffsets,
    Proposal,
    centerness,
    descending_order,
    iou_matrix,
    ltrb_encode,
    make_proposal,
)
from .numerics import smooth_l1

POSITIVE = "positive"
NEGATIVE = "negative"
IGNORE = "ignore"

NEG_THRESH = 0.3
_BCE_CLIP = 1e-12


@dataclass(frozen=True)
class AnchorAssignment:
    label: str
    matched_gt: int | None
    max_iou: float


@dataclass(frozen=True)
class SamplingConfig:
    pro_num: int = 256
    pos_iou: float = 0.7
    pos_ratio: float = 0.5

    def __post_init__(self):
        if self.pro_num < 1:
            raise InvalidArgumentError("pro_num must be positive")
        if not NEG_THRESH < self.pos_iou < 1.0:
            raise InvalidArgumentError(f"pos_iou must lie in ({NEG_THRESH}, 1), got {self.pos_iou}")
        if not 0.0 < self.pos_ratio <= 1.0:
            raise InvalidArgumentError(f"pos_ratio must lie in (0, 1], got {self.pos_ratio}")


STAGE1_SAMPLING = SamplingConfig(256, 0.7, 0.5)
STAGE2_SAMPLING = SamplingConfig(512, 0.5, 0.25)


@dataclass(frozen=True)
class LpgLossWeights:
    lambda1: float = 1.0
    lambda2: float = 8.0
    lambda3: float = 1.0
    lambda4: float = 2.0

    def __post_init__(self):
        ws = self.as_tuple()
        if not all(math.isfinite(w) and w >= 0 for w in ws):
            raise InvalidArgumentError(f"loss weights must be finite and non-negative: {ws}")
        if not any(ws):
            raise InvalidArgumentError("at least one loss weight must be non-zero")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)


@dataclass(frozen=True)
class PseudoLabel:
    box: Box
    objectness: float
    source: str


def assign_anchors(
    anchors: Sequence[Box],
    gt: Sequence[Box],
    pos_thresh: float = 0.7,
    neg_thresh: float = NEG_THRESH,
) -> list[AnchorAssignment]:
    """Label each anchor by its best IoU over all ground-truth boxes."""
    if not pos_thresh > neg_thresh:
        raise InvalidArgumentError(
            f"positive threshold {pos_thresh} must exceed negative threshold {neg_thresh}"
        )
    if not gt:
        return [AnchorAssignment(NEGATIVE, None, 0.0) for _ in anchors]
    if not anchors:
        return []
    overlaps = iou_matrix(anchors, gt)
    best = overlaps.argmax(axis=1)  # first maximum, i.e. lowest GT index on ties
    out = []
    for i, j in enumerate(best):
        m = float(overlaps[i, j])
        if m >= pos_thresh:
            out.append(AnchorAssignment(POSITIVE, int(j), m))
        elif m < neg_thresh:
            out.append(AnchorAssignment(NEGATIVE, None, m))
        else:
            out.append(AnchorAssignment(IGNORE, None, m))
    return out


def sample_minibatch(
    assignments: Sequence[AnchorAssignment],
    cfg: SamplingConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw up to ``pro_num * pos_ratio`` positives, fill the rest with negatives.

    Returned index arrays are sorted.
    """
    pos = np.array([i for i, a in enumerate(assignments) if a.label == POSITIVE], dtype=np.intp)
    neg = np.array([i for i, a in enumerate(assignments) if a.label == NEGATIVE], dtype=np.intp)
    n_pos = min(len(pos), int(cfg.pro_num * cfg.pos_ratio))
    n_neg = min(len(neg), cfg.pro_num - n_pos)
    pos_pick = rng.choice(pos, size=n_pos, replace=False) if n_pos else pos[:0]
    neg_pick = rng.choice(neg, size=n_neg, replace=False) if n_neg else neg[:0]
    return np.sort(pos_pick), np.sort(neg_pick)


def regression_targets(location: tuple[float, float], gt_box: Box) -> tuple[LtrbOffsets, float]:
    offsets = ltrb_encode(location, gt_box)
    return offsets, centerness(offsets)


def xywh_encode(proposal: Box, target: Box) -> np.ndarray:
    """Center offsets scaled by proposal size, log size ratios."""
    px, py = proposal.center
    tx, ty = target.center
    return np.array(
        [
            (tx - px) / proposal.width,
            (ty - py) / proposal.height,
            math.log(target.width / proposal.width),
            math.log(target.height / proposal.height),
        ]
    )


def xywh_decode(proposal: Box, deltas: Sequence[float]) -> Box:
    dx, dy, dw, dh = (float(d) for d in deltas)
    px, py = proposal.center
    cx, cy = px + dx * proposal.width, py + dy * proposal.height
    w, h = proposal.width * math.exp(dw), proposal.height * math.exp(dh)
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


@dataclass
class Stage1Batch:
    ltrb_pred: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    ltrb_target: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    ctr_pred: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctr_target: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class Stage2Batch:
    xywh_pred: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    xywh_target: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    iou_pred: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iou_target: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _pair(pred, target, name: str) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"{name}: prediction shape {p.shape} != target shape {t.shape}")
    return p, t


def _mean_smooth_l1(pred, target, name: str) -> float:
    p, t = _pair(pred, target, name)
    if p.size == 0:
        return 0.0
    return float(np.mean(smooth_l1(p.ravel(), t.ravel())))


def centerness_bce(pred, target) -> float:
    """Binary cross-entropy minus the target's own entropy.

    Same gradient as plain BCE in ``pred``, but exactly zero when
    ``pred == target`` for soft targets.
    """
    p, t = _pair(pred, target, "centerness")
    if p.size == 0:
        return 0.0
    p = np.clip(p, _BCE_CLIP, 1.0 - _BCE_CLIP)
    tc = np.clip(t, _BCE_CLIP, 1.0 - _BCE_CLIP)
    bce = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    ent = -(t * np.log(tc) + (1.0 - t) * np.log(1.0 - tc))
    return float(np.mean(np.maximum(bce - ent, 0.0)))


def lpg_loss(
    stage1: Stage1Batch,
    stage2: Stage2Batch,
    w: LpgLossWeights = LpgLossWeights(),
) -> tuple[float, dict[str, float]]:
    """Weighted four-term proposal loss; returns ``(total, unweighted terms)``."""
    terms = {
        "box1": _mean_smooth_l1(stage1.ltrb_pred, stage1.ltrb_target, "ltrb"),
        "ctr": centerness_bce(stage1.ctr_pred, stage1.ctr_target),
        "box2": _mean_smooth_l1(stage2.xywh_pred, stage2.xywh_target, "xywh"),
        "iou": _mean_smooth_l1(stage2.iou_pred, stage2.iou_target, "iou"),
    }
    total = (
        w.lambda1 * terms["box1"]
        + w.lambda2 * terms["ctr"]
        + w.lambda3 * terms["box2"]
        + w.lambda4 * terms["iou"]
    )
    return total, terms


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, float(v)))


def score_proposals(raw: Sequence[tuple[Box, float, float]]) -> list[Proposal]:
    """Clamp predicted centerness and IoU to [0, 1], then score by their geometric mean."""
    return [make_proposal(box, _clamp01(c), _clamp01(b)) for box, c, b in raw]


def pseudo_label_indices(
    proposals: Sequence[Proposal],
    gt: Sequence[Box],
    top_k: int = 5,
    overlap_cap: float = NEG_THRESH,
    min_s: float = 0.5,
) -> list[int]:
    """Input indices selected by :func:`generate_pseudo_labels`, best first."""
    if top_k < 1:
        raise InvalidArgumentError("top_k must be positive")
    if not 0.0 <= overlap_cap < 1.0:
        raise InvalidArgumentError("overlap_cap must lie in [0, 1)")
    if not proposals:
        return []
    if gt:
        max_overlap = iou_matrix([p.box for p in proposals], gt).max(axis=1)
    else:
        max_overlap = np.zeros(len(proposals))
    keep = [
        i for i, p in enumerate(proposals) if p.objectness >= min_s and max_overlap[i] < overlap_cap
    ]
    scores = [proposals[i].objectness for i in keep]
    return [keep[k] for k in descending_order(scores)][:top_k]


def generate_pseudo_labels(
    proposals: Sequence[Proposal],
    gt: Sequence[Box],
    top_k: int = 5,
    overlap_cap: float = NEG_THRESH,
    min_s: float = 0.5,
    source: str = "",
) -> list[PseudoLabel]:
    """High-objectness proposals that overlap no ground truth, best first, at most ``top_k``."""
    ranked = pseudo_label_indices(proposals, gt, top_k, overlap_cap, min_s)
    return [PseudoLabel(proposals[i].box, proposals[i].objectness, source) for i in ranked]
