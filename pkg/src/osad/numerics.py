"""Dense float64 primitives shared by the detection components.

Vectors and matrices are plain ``numpy.ndarray`` values of dtype float64.
Every function returns a fresh array and never mutates its inputs.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

LN_EPS = 1e-5
SMOOTH_L1_BETA = 1.0


def as_tensor(values, shape: Sequence[int] | None = None, name: str = "tensor") -> np.ndarray:
    """Convert ``values`` to a finite float64 array, optionally checking its shape."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise InvalidArgumentError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    if any(d <= 0 for d in arr.shape):
        raise InvalidArgumentError(f"{name}: dimensions must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name}: contains non-finite entries")
    return arr


def _vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name}: expected a vector, got shape {arr.shape}")
    return arr


def softmax(logits) -> np.ndarray:
    z = _vector(logits, "logits")
    if z.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("softmax input must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(logits) -> np.ndarray:
    z = _vector(logits, "logits")
    if z.size == 0:
        raise InvalidArgumentError("log_softmax of an empty vector")
    shifted = z - z.max()
    return shifted - math.log(np.exp(shifted).sum())


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    """Normalise ``x`` with its population variance, then apply ``gain`` and ``bias``."""
    x = _vector(x, "x")
    gain = np.broadcast_to(np.asarray(gain, dtype=np.float64), x.shape) if np.ndim(gain) == 0 else _vector(gain, "gain")
    bias = np.broadcast_to(np.asarray(bias, dtype=np.float64), x.shape) if np.ndim(bias) == 0 else _vector(bias, "bias")
    if gain.shape != x.shape or bias.shape != x.shape:
        raise InvalidArgumentError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must match x {x.shape}"
        )
    if eps <= 0:
        raise InvalidArgumentError("layer_norm: eps must be positive")
    centered = x - x.mean()
    var = np.mean(centered * centered)
    return gain * centered / math.sqrt(var + eps) + bias


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def cosine_distance(a, b) -> float:
    a = _vector(a, "a")
    b = _vector(b, "b")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"cosine_distance: length mismatch {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine distance is undefined for a zero-norm vector")
    cos = float(a @ b) / (na * nb)
    return 1.0 - min(1.0, max(-1.0, cos))


def euclidean_distance(a, b) -> float:
    a = _vector(a, "a")
    b = _vector(b, "b")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"euclidean_distance: length mismatch {a.size} vs {b.size}")
    return float(np.linalg.norm(a - b))


def smooth_l1(pred, target, beta: float = SMOOTH_L1_BETA):
    """Elementwise smooth-L1; scalar in, scalar out."""
    if beta <= 0:
        raise InvalidArgumentError("smooth_l1: beta must be positive")
    d = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    out = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(out) if out.ndim == 0 else out


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Return ``(-log softmax(logits)[label], softmax(logits) - onehot(label))``."""
    z = _vector(logits, "logits")
    if not 0 <= label < z.size:
        raise InvalidArgumentError(f"label {label} out of range for {z.size} categories")
    logp = log_softmax(z)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise InvalidArgumentError("finite_diff_grad: step must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise DegenerateInputError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def max_relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` between two gradients."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), floor)
    return float(np.linalg.norm(a - n)) / denom
