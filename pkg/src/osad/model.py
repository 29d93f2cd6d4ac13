"""Toy open-set classifier: projection head + linear softmax head + prototypes.

Training minimises cross-entropy plus the prototype contrastive loss with
plain minibatch SGD and hand-derived gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import InvalidArgumentError, InvalidStateError, TrainingFailureError
from .pcl import (
    NONE,
    PclConfig,
    PrototypeStore,
    ProjectionHead,
    UNKNOWN,
    classify,
    nearest_prototype,
    pcl_loss_batch,
    project,
    project_backward,
    prototype_matrix,
)

MODEL_FORMAT = "osad-model/1"


@dataclass
class ToyModel:
    head: ProjectionHead
    cls_w: np.ndarray  # (K, M)
    cls_b: np.ndarray  # (K,)
    prototypes: dict[int, np.ndarray]
    queues: list[list[np.ndarray]]
    pcl: PclConfig
    known: list[int]
    meta: dict = field(default_factory=dict)
    unknown_prototype: np.ndarray | None = None

    def __post_init__(self):
        m = self.head.dims[2]
        if self.cls_w.shape != (len(self.known), m):
            raise InvalidArgumentError(
                f"classifier shape {self.cls_w.shape} does not match {len(self.known)} categories x dim {m}"
            )
        for k, p in self.prototypes.items():
            if p.shape != (m,):
                raise InvalidArgumentError(f"prototype {k} has dimension {p.shape}, expected {m}")

    @property
    def num_categories(self) -> int:
        return len(self.known)

    def embed(self, x) -> np.ndarray:
        return project(self.head, x)[0]

    def logits(self, z) -> np.ndarray:
        return np.asarray(z) @ self.cls_w.T + self.cls_b

    @property
    def pcl_enabled(self) -> bool:
        return bool(self.meta.get("pcl_enabled", True))

    def decide(self, z, logits, threshold: float | None = None) -> int:
        """Category id or UNKNOWN for one embedding.

        Models trained without the contrastive loss fall back to the softmax
        argmax and never reject.
        """
        if not self.pcl_enabled:
            return self.known[int(np.argmax(logits))]
        if not self.prototypes:
            raise InvalidStateError("model has no initialized prototypes")
        out = classify(z, logits, self.prototypes, self.pcl, threshold)
        if out == UNKNOWN:
            return UNKNOWN
        if self.unknown_prototype is not None:
            _, dmin = nearest_prototype(z, self.prototypes, self.pcl.metric)
            if np.linalg.norm(np.asarray(z) - self.unknown_prototype) < dmin:
                return UNKNOWN
        return self.known[out]

    def predict(self, x, threshold: float | None = None) -> np.ndarray:
        """Category id (or UNKNOWN) per row of ``x``."""
        z = self.embed(np.atleast_2d(x))
        lg = self.logits(z)
        return np.array([self.decide(zi, li, threshold) for zi, li in zip(z, lg)], dtype=np.int64)

    def nearest_prototype_labels(self, x) -> np.ndarray:
        z = self.embed(np.atleast_2d(x))
        keys = sorted(self.prototypes)
        protos = np.stack([self.prototypes[k] for k in keys])
        d = np.linalg.norm(z[:, None, :] - protos[None], axis=-1)
        return np.array([self.known[keys[i]] for i in d.argmin(axis=1)], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "head": {k: getattr(self.head, k).tolist() for k in ("w1", "b1", "w2", "b2")},
            "classifier": {"w": self.cls_w.tolist(), "b": self.cls_b.tolist()},
            "prototypes": {str(k): v.tolist() for k, v in sorted(self.prototypes.items())},
            "queues": [[z.tolist() for z in q] for q in self.queues],
            "pcl": {"margin": self.pcl.margin, "metric": self.pcl.metric, "embed_dim": self.pcl.embed_dim},
            "unknown_prototype": None if self.unknown_prototype is None else self.unknown_prototype.tolist(),
            "known": self.known,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ToyModel":
        if data.get("format") != MODEL_FORMAT:
            raise InvalidArgumentError(f"unsupported model format {data.get('format')!r}")
        h = data["head"]
        head = ProjectionHead(*(np.array(h[k], dtype=np.float64) for k in ("w1", "b1", "w2", "b2")))
        return cls(
            head=head,
            cls_w=np.array(data["classifier"]["w"], dtype=np.float64),
            cls_b=np.array(data["classifier"]["b"], dtype=np.float64),
            prototypes={int(k): np.array(v, dtype=np.float64) for k, v in data["prototypes"].items()},
            queues=[[np.array(z, dtype=np.float64) for z in q] for q in data["queues"]],
            pcl=PclConfig(**data["pcl"]),
            known=list(data["known"]),
            meta=data.get("meta", {}),
            unknown_prototype=(None if data.get("unknown_prototype") is None
                               else np.array(data["unknown_prototype"], dtype=np.float64)),
        )


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over rows and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def train_toy(x: np.ndarray, y: np.ndarray, known: list[int], cfg: TrainConfig, seed: int = 0,
              unknown_seed: np.ndarray | None = None) -> ToyModel:
    """Minibatch SGD on cross-entropy + prototype contrastive loss.

    ``y`` holds dataset category ids, all of which must be in ``known``.
    ``unknown_seed`` optionally supplies feature rows (e.g. pseudo-unknown
    proposals) that only ever enter an extra UNKNOWN queue; they never get a
    softmax target.
    """
    x = np.asarray(x, dtype=np.float64)
    index = {c: i for i, c in enumerate(known)}
    if x.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise InvalidArgumentError("training features must be a non-empty (n, D) matrix matching labels")
    if any(int(c) not in index for c in y):
        raise InvalidArgumentError("training set contains categories outside the known set")
    yi = np.array([index[int(c)] for c in y], dtype=np.int64)
    k = len(known)
    d = x.shape[1]
    rng = np.random.default_rng([seed, 10])
    head = ProjectionHead.random(d, cfg.hidden, cfg.embed_dim, seed=int(rng.integers(2**31)))
    cls_w = rng.normal(0.0, 1.0 / math.sqrt(cfg.embed_dim), (k, cfg.embed_dim))
    cls_b = np.zeros(k)
    pcfg = PclConfig(cfg.margin, cfg.metric, cfg.embed_dim)
    i_m = cfg.i_m if cfg.pcl_enabled else cfg.iterations + 1
    seed_x = None if unknown_seed is None or len(unknown_seed) == 0 else np.asarray(unknown_seed, dtype=np.float64)
    n_slots = k + (seed_x is not None)
    store = PrototypeStore(n_slots, cfg.embed_dim, cfg.queue_size, cfg.eta, i_m, cfg.i_n)
    batch = min(cfg.batch, len(x))
    losses: list[float] = []
    actions: dict[str, int] = {}

    for it in range(cfg.iterations):
        idx = rng.choice(len(x), size=batch, replace=False)
        xb, yb = x[idx], yi[idx]
        with np.errstate(over="ignore", invalid="ignore"):
            z, cache = project(head, xb)
            logits = z @ cls_w.T + cls_b
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(logits))):
            raise TrainingFailureError(it)
        loss, g_logits = _cross_entropy(logits, yb)
        g_w = g_logits.T @ z
        g_b = g_logits.sum(axis=0)
        g_z = g_logits @ cls_w

        for zi, ci in zip(z, yb):
            store.push(int(ci), zi)
        if seed_x is not None:
            pick = rng.choice(len(seed_x), size=min(len(seed_x), max(1, batch // k)), replace=False)
            for zu in project(head, seed_x[pick])[0]:
                store.push(k, zu)
        action = store.step(it)
        actions[action] = actions.get(action, 0) + 1
        if action != NONE and store.initialized:
            protos, present = prototype_matrix(store.prototypes, n_slots)
            l_pcl, g_pcl = pcl_loss_batch(z, yb, protos, present, pcfg)
            loss += cfg.pcl_weight * l_pcl
            g_z = g_z + cfg.pcl_weight * g_pcl

        if not math.isfinite(loss):
            raise TrainingFailureError(it)
        grads = project_backward(head, cache, g_z)
        head = ProjectionHead(
            head.w1 - cfg.lr * grads.w1,
            head.b1 - cfg.lr * grads.b1,
            head.w2 - cfg.lr * grads.w2,
            head.b2 - cfg.lr * grads.b2,
        )
        cls_w = cls_w - cfg.lr * g_w
        cls_b = cls_b - cfg.lr * g_b
        losses.append(loss)

    meta = {
        "seed": seed,
        "iterations": cfg.iterations,
        "pcl_enabled": cfg.pcl_enabled,
        "schedule": {"i_m": cfg.i_m, "i_n": cfg.i_n, "eta": cfg.eta, "queue_size": cfg.queue_size},
        "actions": dict(sorted(actions.items())),
        "unknown_seed": 0 if seed_x is None else len(seed_x),
        "losses": losses,
    }
    protos = store.snapshot()
    unknown_proto = protos.pop(k, None)
    return ToyModel(head, cls_w, cls_b, protos, [list(q) for q in store.queues[:k]],
                    pcfg, list(known), meta, unknown_proto)
