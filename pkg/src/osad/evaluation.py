"""Open-set detection metrics: greedy matching, AP, mAP_k, AP_u, WI and AOSE."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, UndefinedMetricError
from .geometry import Box, boxes_array, descending_order
from .pcl import UNKNOWN

SCOPE_KNOWN = "known"
SCOPE_ALL = "all"


@dataclass(frozen=True)
class Detection:
    box: Box
    label: int  # known category id or UNKNOWN
    score: float
    scene: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgumentError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruthObject:
    box: Box
    category: int
    scene: str
    known: bool = True


@dataclass(frozen=True)
class TaskSplit:
    name: str
    known: frozenset
    unknown: frozenset = frozenset()
    scenes: tuple | None = None  # roster; None means every scene
    wilderness_ratio: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "known", frozenset(self.known))
        object.__setattr__(self, "unknown", frozenset(self.unknown))
        if self.known & self.unknown:
            raise InvalidArgumentError(
                f"split {self.name}: categories {sorted(self.known & self.unknown)} are both known and unknown"
            )
        if not self.known:
            raise InvalidArgumentError(f"split {self.name}: no known categories")

    @property
    def closed(self) -> bool:
        return not self.unknown


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.5
    conf: float = 0.5


@dataclass
class EvalReport:
    split: str
    per_category_ap: dict[int, float | None]
    map_k: float | None
    ap_u: float | None
    wi: float | None
    aose: int | None
    p_k: float | None = None
    p_ku: float | None = None
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_category_ap"] = {str(k): v for k, v in sorted(self.per_category_ap.items())}
        return d


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome.

    ``order`` lists the considered detection indices in processing order
    (descending score, ties by input index); ``tp`` and ``assigned`` align with
    it.  ``gt_index``/``gt_matched`` cover the considered ground truth.
    """

    order: list[int]
    tp: list[bool]
    assigned: list[int | None]
    gt_index: list[int]
    gt_matched: list[bool]


def _det_selected(d: Detection, category) -> bool:
    if category is None:
        return True
    if category == UNKNOWN:
        return d.label == UNKNOWN
    return d.label == category


def _gt_selected(g: GroundTruthObject, category) -> bool:
    if category is None:
        return True
    if category == UNKNOWN:
        return not g.known
    return g.known and g.category == category


def _greedy(dets: Sequence[Detection], det_idx: list[int], gts: Sequence[GroundTruthObject],
            gt_idx: list[int], iou_thresh: float) -> MatchResult:
    order = [det_idx[k] for k in descending_order([dets[i].score for i in det_idx])]
    by_scene_gt: dict[str, list[int]] = defaultdict(list)
    for j in gt_idx:
        by_scene_gt[gts[j].scene].append(j)
    by_scene_det: dict[str, list[int]] = defaultdict(list)
    for pos, i in enumerate(order):
        by_scene_det[dets[i].scene].append(pos)
    tp = [False] * len(order)
    assigned: list[int | None] = [None] * len(order)
    matched = {j: False for j in gt_idx}
    for scene, positions in by_scene_det.items():
        scene_gt = by_scene_gt.get(scene, [])
        if not scene_gt:
            continue
        det_arr = boxes_array(dets[order[p]].box for p in positions)
        gt_arr = boxes_array(gts[j].box for j in scene_gt)
        assign, gmatch = kernels.greedy_match(det_arr, gt_arr, float(iou_thresh))
        for p, a in zip(positions, assign):
            if a >= 0:
                tp[p] = True
                assigned[p] = scene_gt[a]
        for j, m in zip(scene_gt, gmatch):
            matched[j] = bool(m)
    return MatchResult(order, tp, assigned, list(gt_idx), [matched[j] for j in gt_idx])


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruthObject],
                     iou_thresh: float = 0.5, category=None) -> MatchResult:
    """Greedy per-scene matching in descending score order.

    ``category`` restricts both sides: a known id selects detections with that
    label and known GT of that category; ``UNKNOWN`` selects UNKNOWN-labelled
    detections and all unknown GT; ``None`` matches everything against
    everything regardless of labels.
    """
    det_idx = [i for i, d in enumerate(dets) if _det_selected(d, category)]
    gt_idx = [j for j, g in enumerate(gts) if _gt_selected(g, category)]
    return _greedy(dets, det_idx, gts, gt_idx, iou_thresh)


def average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of a ranked TP/FP list."""
    if n_gt <= 0:
        raise UndefinedMetricError("average precision needs at least one ground-truth object")
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _scenes_with_unknown(gts: Iterable[GroundTruthObject]) -> set[str]:
    return {g.scene for g in gts if not g.known}


def precision_at_confidence(dets: Sequence[Detection], gts: Sequence[GroundTruthObject],
                            conf: float = 0.5, iou_thresh: float = 0.5,
                            scope: str = SCOPE_ALL) -> float:
    """Precision of known-labelled detections scoring at least ``conf``.

    ``scope="known"`` only looks at scenes without unknown GT; ``scope="all"``
    uses every scene, where a known label landing on an unknown object is a
    false positive.
    """
    if scope not in (SCOPE_KNOWN, SCOPE_ALL):
        raise InvalidArgumentError(f"unknown precision scope {scope!r}")
    excluded = _scenes_with_unknown(gts) if scope == SCOPE_KNOWN else set()
    kept = [d for d in dets if d.label != UNKNOWN and d.score >= conf and d.scene not in excluded]
    if not kept:
        raise UndefinedMetricError(f"no known-labelled detections at confidence {conf} in scope {scope!r}")
    scoped_gt = [g for g in gts if g.scene not in excluded]
    tp = 0
    for label in sorted({d.label for d in kept}):
        tp += sum(match_detections(kept, scoped_gt, iou_thresh, category=label).tp)
    return tp / len(kept)


def wilderness_impact(p_k: float, p_ku: float) -> float:
    """Relative precision drop (in percent) once unknown objects are present."""
    if p_ku == 0:
        raise UndefinedMetricError("wilderness impact undefined for zero open-set precision")
    return (p_k / p_ku - 1.0) * 100.0


def aose(dets: Sequence[Detection], gts: Sequence[GroundTruthObject],
         conf: float = 0.5, iou_thresh: float = 0.5) -> int:
    """Number of unknown objects claimed by a known-labelled detection."""
    kept = [d for d in dets if d.label != UNKNOWN and d.score >= conf]
    unknown_gt = [g for g in gts if not g.known]
    if not kept or not unknown_gt:
        return 0
    return sum(match_detections(kept, unknown_gt, iou_thresh).gt_matched)


def _det_key(d: Detection):
    return (d.scene, -d.score, d.label, d.box.as_list())


def _gt_key(g: GroundTruthObject):
    return (g.scene, g.category, g.box.as_list())


def evaluate_task(dets: Sequence[Detection], gts: Sequence[GroundTruthObject],
                  split: TaskSplit, config: EvalConfig = EvalConfig()) -> EvalReport:
    """Evaluate one task split.

    Records are canonically re-ordered first, so the result does not depend
    on input order.  Ground-truth membership is taken from the split.  Closed
    splits report only per-category AP and mAP_k.
    """
    roster = None if split.scenes is None else set(split.scenes)
    gts_in = []
    for g in gts:
        if roster is not None and g.scene not in roster:
            continue
        if g.category in split.known:
            gts_in.append(replace(g, known=True))
        elif g.category in split.unknown:
            gts_in.append(replace(g, known=False))
        else:
            raise InvalidArgumentError(
                f"split {split.name}: category {g.category} in scene {g.scene} is neither known nor unknown"
            )
    dets_in = [d for d in dets if roster is None or d.scene in roster]
    for d in dets_in:
        if d.label != UNKNOWN and d.label not in split.known:
            raise InvalidArgumentError(f"split {split.name}: detection label {d.label} is not a known category")
    dets_in.sort(key=_det_key)
    gts_in.sort(key=_gt_key)

    per_cat: dict[int, float | None] = {}
    counts: dict[str, dict[str, int]] = {}
    for k in sorted(split.known):
        res = match_detections(dets_in, gts_in, config.iou_thresh, category=k)
        n_gt = len(res.gt_index)
        per_cat[k] = average_precision(res.tp, n_gt) if n_gt else None
        counts[str(k)] = {"tp": sum(res.tp), "fp": len(res.tp) - sum(res.tp), "gt": n_gt}
    defined = [v for v in per_cat.values() if v is not None]
    map_k = float(np.mean(defined)) if defined else None

    ap_u = wi = p_k = p_ku = None
    n_aose = None
    if not split.closed:
        res = match_detections(dets_in, gts_in, config.iou_thresh, category=UNKNOWN)
        n_u = len(res.gt_index)
        counts["unknown"] = {"tp": sum(res.tp), "fp": len(res.tp) - sum(res.tp), "gt": n_u}
        ap_u = average_precision(res.tp, n_u) if n_u else None
        n_aose = aose(dets_in, gts_in, config.conf, config.iou_thresh)
        try:
            p_k = precision_at_confidence(dets_in, gts_in, config.conf, config.iou_thresh, SCOPE_KNOWN)
            p_ku = precision_at_confidence(dets_in, gts_in, config.conf, config.iou_thresh, SCOPE_ALL)
            wi = wilderness_impact(p_k, p_ku)
        except UndefinedMetricError:
            wi = None

    echo = {
        "iou_thresh": config.iou_thresh,
        "conf": config.conf,
        "ap_interpolation": "all-point",
        "wi_protocol": "P_k over scenes without unknown GT; P_k+u over all scenes",
        "unknown_pooling": "all unknown categories pooled",
        "known": sorted(split.known),
        "unknown": sorted(split.unknown),
        "num_scenes": len({g.scene for g in gts_in} | {d.scene for d in dets_in}),
        "wilderness_ratio": split.wilderness_ratio,
    }
    return EvalReport(split.name, per_cat, map_k, ap_u, wi, n_aose, p_k, p_ku, counts, echo)
