"""Finite-difference checks of every hand-derived gradient in the package."""
from __future__ import annotations

import numpy as np

from .numerics import finite_diff_grad, max_relative_error, softmax_cross_entropy
from .pcl import COSINE, EUCLIDEAN, PclConfig, ProjectionHead, pcl_loss, project, project_backward

KINK_GAP = 1e-3


def check_softmax_cross_entropy(rng: np.random.Generator, h: float = 1e-6) -> float:
    k = int(rng.integers(2, 8))
    logits = rng.normal(0.0, 2.0, k)
    label = int(rng.integers(k))
    _, grad = softmax_cross_entropy(logits, label)
    num = finite_diff_grad(lambda v: softmax_cross_entropy(v, label)[0], logits, h)
    return max_relative_error(grad, num)


def _smooth_head(rng: np.random.Generator):
    """Random head and input whose hidden pre-activations all avoid the ReLU kink."""
    while True:
        d, hdim, m = (int(v) for v in rng.integers(2, 7, 3))
        head = ProjectionHead(rng.normal(0, 1, (hdim, d)), rng.normal(0, 0.5, hdim),
                              rng.normal(0, 1, (m, hdim)), rng.normal(0, 0.5, m))
        x = rng.normal(0.0, 1.0, d)
        _, cache = project(head, x)
        if np.min(np.abs(cache.pre)) > KINK_GAP:
            return head, x


def check_project(rng: np.random.Generator, h: float = 1e-6) -> float:
    """Worst relative error over the input gradient and all parameter gradients."""
    head, x = _smooth_head(rng)
    probe = rng.normal(0.0, 1.0, head.dims[2])
    _, cache = project(head, x)
    g = project_backward(head, cache, probe)

    errs = [max_relative_error(g.x, finite_diff_grad(lambda v: float(probe @ project(head, v)[0]), x, h))]
    for name in ("w1", "b1", "w2", "b2"):
        def f(v, name=name):
            parts = {n: getattr(head, n) for n in ("w1", "b1", "w2", "b2")}
            parts[name] = v
            return float(probe @ project(ProjectionHead(**parts), x)[0])

        errs.append(max_relative_error(getattr(g, name), finite_diff_grad(f, getattr(head, name), h)))
    return max(errs)


def check_pcl_loss(rng: np.random.Generator, metric: str = EUCLIDEAN, h: float = 1e-6) -> float:
    while True:
        k = int(rng.integers(2, 6))
        m = int(rng.integers(2, 8))
        protos = {i: rng.normal(0.0, 2.0, m) for i in range(k)}
        z = rng.normal(0.0, 2.0, m)
        label = int(rng.integers(k))
        dist = np.array([_dist(z, p, metric) for p in protos.values()])
        margin = float(np.median(dist)) + (0.3 if metric == EUCLIDEAN else 0.05)
        ok_margin = metric == EUCLIDEAN or margin <= 2.0
        if ok_margin and np.min(np.abs(dist - margin)) > KINK_GAP and dist[label] > KINK_GAP:
            break
    cfg = PclConfig(margin, metric, m)
    _, grad = pcl_loss(z, label, protos, cfg)
    num = finite_diff_grad(lambda v: pcl_loss(v, label, protos, cfg)[0], z, h)
    return max_relative_error(grad, num)


def _dist(z, p, metric):
    if metric == COSINE:
        return 1.0 - float(z @ p) / (np.linalg.norm(z) * np.linalg.norm(p))
    return float(np.linalg.norm(z - p))


def run_all(instances: int = 100, seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    """Max relative error per gradient suite over ``instances`` seeded draws."""
    rng = np.random.default_rng(seed)
    suites = {
        "softmax_cross_entropy": lambda: check_softmax_cross_entropy(rng, h),
        "project": lambda: check_project(rng, h),
        "pcl_loss_euclidean": lambda: check_pcl_loss(rng, EUCLIDEAN, h),
        "pcl_loss_cosine": lambda: check_pcl_loss(rng, COSINE, h),
    }
    return {name: max(fn() for _ in range(instances)) for name, fn in suites.items()}
