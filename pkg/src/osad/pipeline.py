"""End-to-end toy pipeline: proposal scoring, NMS, classification, evaluation suites."""
from __future__ import annotations

import copy
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import Config, LpgConfig, PipelineConfig
from .errors import OsadError
from .evaluation import Detection, EvalConfig, EvalReport, TaskSplit, evaluate_task
from .geometry import Box, descending_order, ltrb_encode, nms
from .lpg import (
    POSITIVE,
    LpgLossWeights,
    PseudoLabel,
    SamplingConfig,
    Stage1Batch,
    Stage2Batch,
    assign_anchors,
    pseudo_label_indices,
    lpg_loss,
    regression_targets,
    sample_minibatch,
    score_proposals,
    xywh_encode,
)
from .model import ToyModel, train_toy
from .numerics import softmax
from .pcl import UNKNOWN
from .synthetic import Scene, SceneDataset, gen_embedding_dataset, gen_scene_dataset


@dataclass(frozen=True)
class StageCounts:
    scene: str
    proposals: int
    top_n: int
    after_nms: int
    after_conf: int
    unknown: int


def infer_scene(scene: Scene, model: ToyModel, cfg: PipelineConfig) -> tuple[list[Detection], StageCounts]:
    proposals = score_proposals([(p.box, p.centerness, p.iou) for p in scene.proposals])
    order = [int(i) for i in descending_order([p.objectness for p in proposals])[: cfg.top_n]]
    kept = [order[i] for i in nms([(proposals[j].box, proposals[j].objectness) for j in order], cfg.nms_iou)]
    dets: list[Detection] = []
    n_conf = 0
    if kept:
        z = model.embed(np.stack([scene.proposals[j].feature for j in kept]))
        logits = model.logits(z)
        for j, zj, lj in zip(kept, z, logits):
            conf = float(np.max(softmax(lj)))
            if conf < cfg.conf_floor:
                continue
            n_conf += 1
            label = model.decide(zj, lj, cfg.unknown_threshold)
            score = proposals[j].objectness if label == UNKNOWN else conf
            dets.append(Detection(proposals[j].box, label, score, scene.id))
    counts = StageCounts(scene.id, len(proposals), len(order), len(kept), n_conf,
                         sum(d.label == UNKNOWN for d in dets))
    return dets, counts


def run_inference(scenes: Sequence[Scene], model: ToyModel, cfg: PipelineConfig,
                  return_trace: bool = False):
    """Per scene: objectness, top-n, NMS, softmax floor, then known/unknown decision.

    Known detections are scored by their softmax confidence, unknown ones by
    their objectness.
    """
    cfg.validate()
    detections: list[Detection] = []
    trace: list[StageCounts] = []
    for scene in scenes:
        dets, counts = infer_scene(scene, model, cfg)
        detections.extend(dets)
        trace.append(counts)
    return (detections, trace) if return_trace else detections


# LPG harness step: proposals stand in for anchors; the refinement head is
# simulated by moving each proposal halfway towards its matched box.


def _refined(proposal: Box, gt: Box) -> Box:
    return Box(*((a + b) / 2.0 for a, b in zip(proposal.as_list(), gt.as_list())))


def _inside(loc, box: Box) -> bool:
    return box.x1 < loc[0] < box.x2 and box.y1 < loc[1] < box.y2


def lpg_scene_batches(scene: Scene, cfg: LpgConfig, rng: np.random.Generator) -> tuple[Stage1Batch, Stage2Batch]:
    gts = [g.box for g in scene.ground_truth]
    anchors = [p.box for p in scene.proposals]

    s1 = SamplingConfig(cfg.stage1_pro_num, cfg.stage1_pos_iou, cfg.stage1_pos_ratio)
    a1 = assign_anchors(anchors, gts, s1.pos_iou)
    ltrb_p, ltrb_t, ctr_p, ctr_t = [], [], [], []
    for i in itertools.chain(*sample_minibatch(a1, s1, rng)):
        p = scene.proposals[i]
        loc = p.box.center
        ctr_p.append(min(1.0, max(0.0, p.centerness)))
        gt = gts[a1[i].matched_gt] if a1[i].label == POSITIVE else None
        if gt is not None and _inside(loc, gt):
            target, ctr = regression_targets(loc, gt)
            ltrb_p.append(ltrb_encode(loc, p.box).as_tuple())
            ltrb_t.append(target.as_tuple())
            ctr_t.append(ctr)
        else:
            ctr_t.append(0.0)

    s2 = SamplingConfig(cfg.stage2_pro_num, cfg.stage2_pos_iou, cfg.stage2_pos_ratio)
    a2 = assign_anchors(anchors, gts, s2.pos_iou)
    xy_p, xy_t, iou_p, iou_t = [], [], [], []
    for i in itertools.chain(*sample_minibatch(a2, s2, rng)):
        p = scene.proposals[i]
        iou_p.append(min(1.0, max(0.0, p.iou)))
        iou_t.append(a2[i].max_iou)
        if a2[i].label == POSITIVE:
            gt = gts[a2[i].matched_gt]
            xy_p.append(xywh_encode(p.box, _refined(p.box, gt)))
            xy_t.append(xywh_encode(p.box, gt))

    stage1 = Stage1Batch(np.array(ltrb_p).reshape(-1, 4), np.array(ltrb_t).reshape(-1, 4),
                         np.array(ctr_p), np.array(ctr_t))
    stage2 = Stage2Batch(np.array(xy_p).reshape(-1, 4), np.array(xy_t).reshape(-1, 4),
                         np.array(iou_p), np.array(iou_t))
    return stage1, stage2


def lpg_report(dataset: SceneDataset, cfg: LpgConfig, seed: int = 0) -> dict:
    """Mean proposal loss (total and per term) over all scenes."""
    rng = np.random.default_rng([seed, 20])
    weights = LpgLossWeights(*cfg.lambdas)
    totals, terms = [], {"box1": [], "ctr": [], "box2": [], "iou": []}
    for scene in dataset.scenes:
        total, parts = lpg_loss(*lpg_scene_batches(scene, cfg, rng), weights)
        totals.append(total)
        for k, v in parts.items():
            terms[k].append(v)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
    return {"total": mean(totals), "terms": {k: mean(v) for k, v in terms.items()},
            "lambdas": list(weights.as_tuple())}


def scene_pseudo_labels(dataset: SceneDataset, cfg: LpgConfig) -> list[tuple[PseudoLabel, np.ndarray]]:
    """Pseudo-unknowns per scene, judged against annotated (known) objects only."""
    out = []
    for scene in dataset.scenes:
        props = score_proposals([(p.box, p.centerness, p.iou) for p in scene.proposals])
        known_gt = [g.box for g in scene.ground_truth if g.known]
        for i in pseudo_label_indices(props, known_gt, cfg.pseudo_top_k, cfg.pseudo_overlap_cap, cfg.pseudo_min_s):
            out.append((PseudoLabel(props[i].box, props[i].objectness, scene.id), scene.proposals[i].feature))
    return out


def pseudo_labels_to_json(items: list[tuple[PseudoLabel, np.ndarray]]) -> dict:
    return {"pseudo_labels": [
        {"scene": pl.source, "box": pl.box.as_list(), "objectness": pl.objectness, "feature": f.tolist()}
        for pl, f in items
    ]}


# Task suite: closed split, growing unknown-category sets, growing wilderness.

WILDERNESS_STEPS = (44 / 80, 70 / 80, 80 / 80)


def default_splits(dataset: SceneDataset) -> list[TaskSplit]:
    known = frozenset(dataset.known)
    unknown = list(dataset.unknown)
    calm = [s.id for s in dataset.scenes if not s.has_unknown]
    wild = [s for s in dataset.scenes if s.has_unknown]
    splits = [TaskSplit("T-1", known, frozenset(), tuple(calm), 0.0)]
    for n in range(1, min(3, len(unknown)) + 1):
        allowed = set(unknown[:n])
        roster = calm + [s.id for s in wild if {g.category for g in s.ground_truth if not g.known} <= allowed]
        splits.append(TaskSplit(f"T-{1 + n}", known, frozenset(allowed), tuple(roster),
                                _ratio(len(roster) - len(calm), len(roster))))
    if unknown and wild:
        for n, frac in enumerate(WILDERNESS_STEPS):
            take = [s.id for s in wild[: max(1, math.ceil(frac * len(wild)))]]
            roster = calm + take
            splits.append(TaskSplit(f"T-{5 + n}", known, frozenset(unknown), tuple(roster),
                                    _ratio(len(take), len(roster))))
    return splits


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def run_task_suite(splits: Sequence[TaskSplit], dataset: SceneDataset, detections: Sequence[Detection],
                   eval_cfg: EvalConfig = EvalConfig()) -> tuple[list[EvalReport], str]:
    reports = []
    gts = [g for s in dataset.scenes for g in s.ground_truth]
    for split in splits:
        try:
            reports.append(evaluate_task(detections, gts, split, eval_cfg))
        except OsadError as exc:
            raise type(exc)(f"split {split.name}: {exc}") from exc
    return reports, render_table(reports)


def _fmt(v, scale: float = 1.0) -> str:
    return "-" if v is None else f"{v * scale:.2f}"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table; APs in percent, 2 decimals, '-' when not applicable."""
    header = ["Task", "WR", "WI", "AOSE", "mAP_k", "AP_u"]
    rows = [[r.split, _fmt(r.config.get("wilderness_ratio")), _fmt(r.wi), _fmt(r.aose),
             _fmt(r.map_k, 100.0), _fmt(r.ap_u, 100.0)] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))  # noqa: E731
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]) + "\n"


def train_from_config(cfg: Config, pseudo_features: np.ndarray | None = None) -> ToyModel:
    data = gen_embedding_dataset(cfg.synthetic)
    seed_feats = pseudo_features if cfg.train.use_pseudo_labels else None
    return train_toy(data.train_x, data.train_y, data.known, cfg.train, seed=cfg.synthetic.seed,
                     unknown_seed=seed_feats)


def sweep(cfg: Config, split_name: str = "T-6") -> list[dict]:
    """Grid over queue size, margin, loss weights and stage-1 sampling.

    Every grid point retrains the toy model, reruns inference and evaluates
    one split; the proposal loss for the point's LPG settings is reported too.
    """
    grid = {
        "queue_size": cfg.sweep.queue_size or [cfg.train.queue_size],
        "margin": cfg.sweep.margin or [cfg.train.margin],
        "lambdas": cfg.sweep.lambdas or [cfg.lpg.lambdas],
        "sampling": cfg.sweep.sampling or [[cfg.lpg.stage1_pro_num, cfg.lpg.stage1_pos_iou, cfg.lpg.stage1_pos_ratio]],
    }
    scenes = gen_scene_dataset(cfg.synthetic)
    splits = {s.name: s for s in default_splits(scenes)}
    split = splits.get(split_name) or list(splits.values())[-1]
    rows = []
    models: dict[tuple, ToyModel] = {}
    for q, t, lam, samp in itertools.product(*grid.values()):
        point = copy.deepcopy(cfg)
        point.train.queue_size = int(q)
        point.train.margin = float(t)
        point.pipeline.unknown_threshold = float(t)
        point.lpg.lambdas = list(lam)
        point.lpg.stage1_pro_num, point.lpg.stage1_pos_iou, point.lpg.stage1_pos_ratio = samp
        key = (int(q), float(t))
        if key not in models:
            models[key] = train_from_config(point)
        dets = run_inference(scenes.scenes, models[key], point.pipeline)
        (report,), _ = run_task_suite([split], scenes, dets, EvalConfig(point.eval.iou_thresh, point.eval.conf))
        rows.append({
            "queue_size": int(q), "margin": float(t), "lambdas": list(lam), "sampling": list(samp),
            "split": report.split, "wi": report.wi, "aose": report.aose,
            "map_k": report.map_k, "ap_u": report.ap_u,
            "lpg_loss": lpg_report(scenes, point.lpg, cfg.synthetic.seed)["total"],
        })
    return rows
