"""Seeded synthetic data: Gaussian feature clusters and box scenes built on them.

Category ids ``0..K-1`` are known, ``K..K+U-1`` unknown.  All generators
derive their streams from ``cfg.seed`` so embeddings and scenes share the
same cluster means.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SyntheticConfig
from .evaluation import GroundTruthObject
from .geometry import Box, centerness, iou, ltrb_encode

_MEANS, _EMBED, _SCENES = 0, 1, 2


@dataclass
class EmbeddingDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    known: list[int]
    unknown: list[int]
    seed: int

    def to_json(self) -> dict:
        def rows(x, y):
            return [{"feature": f.tolist(), "category": int(c)} for f, c in zip(x, y)]

        return {
            "train": rows(self.train_x, self.train_y),
            "test": rows(self.test_x, self.test_y),
            "meta": {"seed": self.seed, "known": self.known, "unknown": self.unknown},
        }

    @classmethod
    def from_json(cls, data: dict) -> "EmbeddingDataset":
        def cols(rows):
            if not rows:
                return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
            return (np.array([r["feature"] for r in rows], dtype=np.float64),
                    np.array([r["category"] for r in rows], dtype=np.int64))

        tx, ty = cols(data["train"])
        sx, sy = cols(data["test"])
        meta = data["meta"]
        return cls(tx, ty, sx, sy, list(meta["known"]), list(meta["unknown"]), int(meta["seed"]))


@dataclass
class SceneProposal:
    box: Box
    centerness: float
    iou: float
    feature: np.ndarray
    source_gt: int = -1  # generating GT index; -1 for background distractors
    true_iou: float = 0.0


@dataclass
class Scene:
    id: str
    ground_truth: list[GroundTruthObject]
    proposals: list[SceneProposal] = field(default_factory=list)

    @property
    def has_unknown(self) -> bool:
        return any(not g.known for g in self.ground_truth)


@dataclass
class SceneDataset:
    scenes: list[Scene]
    known: list[int]
    unknown: list[int]
    seed: int

    def to_json(self) -> dict:
        return {
            "scenes": [
                {
                    "id": s.id,
                    "ground_truth": [{"box": g.box.as_list(), "category": g.category} for g in s.ground_truth],
                    "proposals": [
                        {"box": p.box.as_list(), "centerness": p.centerness, "iou": p.iou,
                         "feature": p.feature.tolist()}
                        for p in s.proposals
                    ],
                }
                for s in self.scenes
            ],
            "meta": {"seed": self.seed, "known": self.known, "unknown": self.unknown},
        }

    @classmethod
    def from_json(cls, data: dict) -> "SceneDataset":
        meta = data["meta"]
        known = set(meta["known"])
        scenes = []
        for s in data["scenes"]:
            gts = [GroundTruthObject(Box.from_list(g["box"]), int(g["category"]), s["id"],
                                     int(g["category"]) in known)
                   for g in s["ground_truth"]]
            props = [SceneProposal(Box.from_list(p["box"]), float(p["centerness"]), float(p["iou"]),
                                   np.array(p["feature"], dtype=np.float64))
                     for p in s["proposals"]]
            scenes.append(Scene(s["id"], gts, props))
        return cls(scenes, list(meta["known"]), list(meta["unknown"]), int(meta["seed"]))


def category_ids(cfg: SyntheticConfig) -> tuple[list[int], list[int]]:
    return list(range(cfg.known)), list(range(cfg.known, cfg.known + cfg.unknown))


def cluster_means(cfg: SyntheticConfig) -> np.ndarray:
    """``(K + U + 1, D)`` means; the last row is the background cluster."""
    rng = np.random.default_rng([cfg.seed, _MEANS])
    return rng.normal(0.0, cfg.spread, (cfg.known + cfg.unknown + 1, cfg.dim))


def gen_embedding_dataset(cfg: SyntheticConfig) -> EmbeddingDataset:
    """Isotropic Gaussian clusters; unknown categories only appear in the test split."""
    cfg.validate()
    means = cluster_means(cfg)
    rng = np.random.default_rng([cfg.seed, _EMBED])
    known, unknown = category_ids(cfg)

    def draw(cats, n):
        x = np.concatenate([means[c] + rng.normal(0.0, cfg.noise, (n, cfg.dim)) for c in cats])
        y = np.repeat(np.array(cats, dtype=np.int64), n)
        return x, y

    train_x, train_y = draw(known, cfg.train_per_category)
    if cfg.test_per_category:
        test_x, test_y = draw(known + unknown, cfg.test_per_category)
    else:
        test_x, test_y = np.zeros((0, cfg.dim)), np.zeros(0, dtype=np.int64)
    return EmbeddingDataset(train_x, train_y, test_x, test_y, known, unknown, cfg.seed)


def _random_box(rng, cfg: SyntheticConfig) -> Box:
    w, h = rng.uniform(cfg.box_min, cfg.box_max, 2)
    x1 = rng.uniform(0.0, cfg.image_size - w)
    y1 = rng.uniform(0.0, cfg.image_size - h)
    return Box(x1, y1, x1 + w, y1 + h)


def _jitter(rng, box: Box, scale: float) -> Box:
    if scale == 0:
        return box
    for _ in range(100):
        dx1, dx2 = rng.normal(0.0, scale * box.width, 2)
        dy1, dy2 = rng.normal(0.0, scale * box.height, 2)
        x1, x2 = box.x1 + dx1, box.x2 + dx2
        y1, y2 = box.y1 + dy1, box.y2 + dy2
        if x2 - x1 > 1.0 and y2 - y1 > 1.0:
            return Box(x1, y1, x2, y2)
    return box


def latent_centerness(proposal: Box, gt: Box) -> float:
    """Centerness of the proposal's center inside the GT box (0 when outside)."""
    try:
        return centerness(ltrb_encode(proposal.center, gt))
    except ValueError:
        return 0.0


def gen_scene_dataset(cfg: SyntheticConfig) -> SceneDataset:
    """Scenes of non-overlapping GT objects, jittered proposals per object, and distractors.

    A ``cfg.wilderness`` fraction of scenes contains at least one unknown object.
    """
    cfg.validate()
    means = cluster_means(cfg)
    rng = np.random.default_rng([cfg.seed, _SCENES])
    known, unknown = category_ids(cfg)
    n_wild = int(round(cfg.wilderness * cfg.scenes)) if unknown else 0
    wild = np.zeros(cfg.scenes, dtype=bool)
    wild[rng.permutation(cfg.scenes)[:n_wild]] = True
    background = means[-1]

    scenes = []
    for s in range(cfg.scenes):
        sid = f"scene-{s:03d}"
        n_obj = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
        cats = [int(rng.choice(known)) for _ in range(n_obj)]
        if wild[s]:
            n_unk = max(1, int(rng.integers(0, n_obj + 1)))
            for i in rng.permutation(n_obj)[:n_unk]:
                cats[i] = int(rng.choice(unknown))
        boxes: list[Box] = []
        for _ in range(n_obj):
            for _attempt in range(200):
                cand = _random_box(rng, cfg)
                if all(iou(cand, b) == 0.0 for b in boxes):
                    break
            boxes.append(cand)
        gts = [GroundTruthObject(b, c, sid, c in known) for b, c in zip(boxes, cats)]

        props = []
        for j, g in enumerate(gts):
            for _ in range(cfg.proposals_per_object):
                pb = _jitter(rng, g.box, cfg.jitter)
                t_iou = iou(pb, g.box)
                c_obs = latent_centerness(pb, g.box) + rng.normal(0.0, cfg.score_noise)
                b_obs = t_iou + rng.normal(0.0, cfg.score_noise)
                feat = means[g.category] + rng.normal(0.0, cfg.noise, cfg.dim)
                props.append(SceneProposal(pb, float(c_obs), float(b_obs), feat, j, t_iou))
        for _ in range(cfg.distractors):
            pb = _random_box(rng, cfg)
            t_iou = max((iou(pb, g.box) for g in gts), default=0.0)
            c_obs = rng.uniform(0.0, 0.3) + rng.normal(0.0, cfg.score_noise)
            b_obs = t_iou + rng.normal(0.0, cfg.score_noise)
            feat = background + rng.normal(0.0, cfg.noise, cfg.dim)
            props.append(SceneProposal(pb, float(c_obs), float(b_obs), feat, -1, t_iou))
        scenes.append(Scene(sid, gts, props))
    return SceneDataset(scenes, known, unknown, cfg.seed)


def nearest_centroid_accuracy(x: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of classifying each row by the closest per-class mean of ``(x, y)``."""
    cats = np.unique(y)
    cents = np.stack([x[y == c].mean(axis=0) for c in cats])
    d = ((x[:, None, :] - cents[None, :, :]) ** 2).sum(axis=-1)
    return float(np.mean(cats[d.argmin(axis=1)] == y))


def iou_from_scene(scene: Scene) -> list[float]:
    """True IoU of every object proposal with its generating box, recomputed."""
    return [iou(p.box, scene.ground_truth[p.source_gt].box) for p in scene.proposals if p.source_gt >= 0]
