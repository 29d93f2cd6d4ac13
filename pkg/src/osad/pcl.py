"""Prototype contrastive learning.

A two-layer projection head maps RoI features to embeddings.  Per-category
FIFO queues of recent embeddings define class prototypes (queue means), which
are set once at warm-up and then refreshed with momentum on a fixed period.
The loss pulls an embedding onto its own prototype and pushes it at least a
margin away from every other prototype; the same margin doubles as the
rejection radius at inference.
"""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, InvalidStateError
from .numerics import softmax

UNKNOWN = -1

EUCLIDEAN = "euclidean"
COSINE = "cosine"

NONE = "none"
INITIALIZE = "initialize_and_loss"
REFRESH = "refresh_and_loss"
LOSS_ONLY = "loss_only"


@dataclass(frozen=True)
class PclConfig:
    margin: float = 13.0
    metric: str = EUCLIDEAN
    embed_dim: int = 128

    def __post_init__(self):
        if not self.margin > 0:
            raise InvalidArgumentError("margin must be positive")
        if self.metric not in (EUCLIDEAN, COSINE):
            raise InvalidArgumentError(f"unknown metric {self.metric!r}")
        if self.metric == COSINE and self.margin > 2.0:
            warnings.warn(
                f"cosine distance never exceeds 2; margin {self.margin} makes the hinge always active",
                stacklevel=2,
            )


@dataclass(frozen=True)
class ProjectionHead:
    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (M, H)
    b2: np.ndarray  # (M,)

    def __post_init__(self):
        h, d = self.w1.shape
        m = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (m, h) or self.b2.shape != (m,):
            raise InvalidArgumentError(
                f"inconsistent head shapes w1={self.w1.shape} b1={self.b1.shape} "
                f"w2={self.w2.shape} b2={self.b2.shape}"
            )
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidArgumentError(f"head parameter {name} is not finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    @classmethod
    def random(cls, d: int = 1024, h: int = 256, m: int = 128, seed: int = 0) -> "ProjectionHead":
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, math.sqrt(2.0 / d), (h, d)),
            b1=np.zeros(h),
            w2=rng.normal(0.0, math.sqrt(2.0 / h), (m, h)),
            b2=np.zeros(m),
        )


@dataclass(frozen=True)
class HeadCache:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray


@dataclass(frozen=True)
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    x: np.ndarray


def project(head: ProjectionHead, feature) -> tuple[np.ndarray, HeadCache]:
    """Embed one feature vector (or a batch of rows) through FC-ReLU-FC."""
    x = np.asarray(feature, dtype=np.float64)
    d = head.w1.shape[1]
    if x.shape[-1:] != (d,) or x.ndim > 2:
        raise InvalidArgumentError(f"feature must have trailing dimension {d}, got {x.shape}")
    pre = x @ head.w1.T + head.b1
    hidden = np.maximum(pre, 0.0)
    z = hidden @ head.w2.T + head.b2
    return z, HeadCache(x, pre, hidden)


def project_backward(head: ProjectionHead, cache: HeadCache, grad_z) -> HeadGrads:
    """Gradients of a scalar loss given ``dL/dz`` (same leading shape as the cache)."""
    gz = np.asarray(grad_z, dtype=np.float64)
    single = gz.ndim == 1
    gz2 = gz[None, :] if single else gz
    hidden = cache.hidden[None, :] if single else cache.hidden
    pre = cache.pre[None, :] if single else cache.pre
    x = cache.x[None, :] if single else cache.x
    gw2 = gz2.T @ hidden
    gb2 = gz2.sum(axis=0)
    gh = (gz2 @ head.w2) * (pre > 0)
    gw1 = gh.T @ x
    gb1 = gh.sum(axis=0)
    gx = gh @ head.w1
    return HeadGrads(gw1, gb1, gw2, gb2, gx[0] if single else gx)


def schedule_action(iteration: int, i_m: int, i_n: int) -> str:
    """What the prototype store does at ``iteration``.

    Before ``i_m`` nothing happens and the contrastive loss is zero; at ``i_m``
    prototypes are set to the queue means; afterwards they are refreshed with
    momentum on multiples of ``i_n`` and the loss is computed every iteration.
    """
    if i_m < 0 or i_n < 1:
        raise InvalidArgumentError(f"invalid schedule i_m={i_m}, i_n={i_n}")
    if iteration < i_m:
        return NONE
    if iteration == i_m:
        return INITIALIZE
    if iteration % i_n == 0:
        return REFRESH
    return LOSS_ONLY


def momentum_update(
    prototypes: Mapping[int, np.ndarray], p_new: Mapping[int, np.ndarray], eta: float
) -> dict[int, np.ndarray]:
    """``p <- eta * p + (1 - eta) * p_new``; categories missing from ``p_new`` are kept."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidArgumentError(f"momentum must lie in [0, 1], got {eta}")
    out = {k: np.array(v, dtype=np.float64) for k, v in prototypes.items()}
    for k, new in p_new.items():
        new = np.asarray(new, dtype=np.float64)
        if k not in out:
            out[k] = new.copy()
            continue
        if new.shape != out[k].shape:
            raise InvalidArgumentError(
                f"prototype {k}: dimension {new.shape} does not match {out[k].shape}"
            )
        out[k] = eta * out[k] + (1.0 - eta) * new
    return out


class PrototypeStore:
    """Per-category embedding queues plus the prototypes derived from them.

    Single writer: the training loop owns the store and hands out immutable
    snapshots via :meth:`snapshot`.
    """

    def __init__(self, num_categories: int, embed_dim: int, queue_size: int = 16,
                 eta: float = 0.99, i_m: int = 500, i_n: int = 1000):
        if num_categories < 1 or embed_dim < 1 or queue_size < 1:
            raise InvalidArgumentError("categories, embedding dim and queue size must be positive")
        if not 0.0 <= eta <= 1.0:
            raise InvalidArgumentError(f"momentum must lie in [0, 1], got {eta}")
        schedule_action(0, i_m, i_n)  # validates the schedule
        self.num_categories = num_categories
        self.embed_dim = embed_dim
        self.queue_size = queue_size
        self.eta = eta
        self.i_m = i_m
        self.i_n = i_n
        self.queues: list[deque] = [deque(maxlen=queue_size) for _ in range(num_categories)]
        self.prototypes: dict[int, np.ndarray] = {}
        self.initialized = False

    def push(self, category: int, z) -> None:
        if not 0 <= category < self.num_categories:
            raise InvalidArgumentError(f"unknown category index {category}")
        z = np.array(z, dtype=np.float64)
        if z.shape != (self.embed_dim,) or not np.all(np.isfinite(z)):
            raise InvalidArgumentError(f"embedding must be a finite {self.embed_dim}-vector")
        self.queues[category].append(z)

    def compute_prototypes(self) -> dict[int, np.ndarray]:
        """Mean of each non-empty queue; empty queues are absent from the result."""
        return {k: np.mean(np.stack(q), axis=0) for k, q in enumerate(self.queues) if q}

    def initialize(self) -> None:
        self.prototypes = self.compute_prototypes()
        self.initialized = bool(self.prototypes)

    def refresh(self) -> None:
        if not self.initialized:
            raise InvalidStateError("prototypes must be initialized before a momentum refresh")
        self.prototypes = momentum_update(self.prototypes, self.compute_prototypes(), self.eta)

    def step(self, iteration: int) -> str:
        """Apply the schedule for ``iteration`` and return the action taken."""
        action = schedule_action(iteration, self.i_m, self.i_n)
        if action == INITIALIZE:
            self.initialize()
        elif action == REFRESH:
            if self.initialized:
                self.refresh()
            else:
                self.initialize()
        return action

    def snapshot(self) -> dict[int, np.ndarray]:
        return {k: v.copy() for k, v in self.prototypes.items()}


def prototype_matrix(prototypes: Mapping[int, np.ndarray], num_categories: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack prototypes into ``(K, M)`` with a presence mask for absent categories."""
    if not prototypes:
        raise InvalidStateError("prototypes are not initialized")
    m = len(next(iter(prototypes.values())))
    mat = np.zeros((num_categories, m))
    present = np.zeros(num_categories, dtype=bool)
    for k, v in prototypes.items():
        mat[k] = v
        present[k] = True
    return mat, present


def distances(z, protos: np.ndarray, metric: str = EUCLIDEAN) -> tuple[np.ndarray, np.ndarray]:
    """Distances from embedding(s) to each prototype and their gradients in ``z``.

    For a single ``z`` (shape ``(M,)``) returns ``(K,)`` distances and ``(K, M)``
    gradients; for a batch ``(n, M)`` returns ``(n, K)`` and ``(n, K, M)``.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    diff = zb[:, None, :] - protos[None, :, :]
    if metric == EUCLIDEAN:
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        safe = np.where(dist > 0, dist, 1.0)
        grad = np.where((dist > 0)[..., None], diff / safe[..., None], 0.0)
    elif metric == COSINE:
        zn = np.linalg.norm(zb, axis=-1)
        pn = np.linalg.norm(protos, axis=-1)
        if np.any(zn == 0) or np.any(pn == 0):
            raise DegenerateInputError("cosine distance is undefined for a zero-norm vector")
        dots = zb @ protos.T
        cos = dots / (zn[:, None] * pn[None, :])
        dist = 1.0 - cos
        # d(1 - cos)/dz = -(p / (|z||p|) - cos * z / |z|^2)
        grad = -(
            protos[None, :, :] / (zn[:, None, None] * pn[None, :, None])
            - cos[..., None] * zb[:, None, :] / (zn[:, None, None] ** 2)
        )
    else:
        raise InvalidArgumentError(f"unknown metric {metric!r}")
    if single:
        return dist[0], grad[0]
    return dist, grad


def _check_prototypes(prototypes: Mapping[int, np.ndarray]) -> None:
    if not prototypes:
        raise InvalidStateError("prototypes are not initialized")


def pcl_loss(z, label: int, prototypes: Mapping[int, np.ndarray], cfg: PclConfig) -> tuple[float, np.ndarray]:
    """Contrastive loss of one embedding against all prototypes, and ``dL/dz``.

    Own prototype contributes its distance; every other prototype contributes
    ``max(0, margin - distance)`` (zero subgradient at the kink).
    """
    _check_prototypes(prototypes)
    if label < 0:
        raise InvalidArgumentError(f"invalid label {label}")
    z = np.asarray(z, dtype=np.float64)
    keys = sorted(prototypes)
    protos = np.stack([prototypes[k] for k in keys])
    if protos.shape[1] != z.shape[-1]:
        raise InvalidArgumentError("embedding and prototype dimensions differ")
    dist, dgrad = distances(z, protos, cfg.metric)
    loss = 0.0
    grad = np.zeros_like(z)
    for idx, k in enumerate(keys):
        if k == label:
            loss += dist[idx]
            grad += dgrad[idx]
        elif dist[idx] < cfg.margin:
            loss += cfg.margin - dist[idx]
            grad -= dgrad[idx]
    return float(loss), grad


def pcl_loss_batch(z, labels, protos: np.ndarray, present: np.ndarray, cfg: PclConfig) -> tuple[float, np.ndarray]:
    """Mean :func:`pcl_loss` over a batch, with the gradient of that mean."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    dist, dgrad = distances(z, protos, cfg.metric)
    own = np.zeros_like(dist, dtype=bool)
    own[np.arange(n), labels] = True
    own &= present[None, :]
    active = (~own) & present[None, :] & (dist < cfg.margin)
    per = np.where(own, dist, 0.0).sum(axis=1) + np.where(active, cfg.margin - dist, 0.0).sum(axis=1)
    coef = own.astype(np.float64) - active.astype(np.float64)
    grad = np.einsum("nk,nkm->nm", coef, dgrad) / n
    return float(per.mean()), grad


def nearest_prototype(z, prototypes: Mapping[int, np.ndarray], metric: str = EUCLIDEAN) -> tuple[int, float]:
    _check_prototypes(prototypes)
    keys = sorted(prototypes)
    dist, _ = distances(z, np.stack([prototypes[k] for k in keys]), metric)
    i = int(np.argmin(dist))
    return keys[i], float(dist[i])


def classify(z, logits, prototypes: Mapping[int, np.ndarray], cfg: PclConfig,
             threshold: float | None = None) -> int:
    """Known category by softmax argmax, or :data:`UNKNOWN` when every prototype is too far.

    ``threshold`` defaults to the contrastive margin.
    """
    _, dmin = nearest_prototype(z, prototypes, cfg.metric)
    t = cfg.margin if threshold is None else threshold
    if dmin > t:
        return UNKNOWN
    return int(np.argmax(softmax(logits)))
