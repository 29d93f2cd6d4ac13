"""Global context block: attention pooling, LN bottleneck, broadcast residual add.

Feature maps are ``(C, H, W)`` arrays; internally positions are flattened to
columns of a ``(C, H*W)`` matrix.  Pooled quantities use ``math.fsum`` so they
are independent of position order, which makes the block exactly
permutation-equivariant over positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import LN_EPS, layer_norm, relu

DEFAULT_RATIO = 4


@dataclass(frozen=True)
class GcmParams:
    theta_k: np.ndarray  # (C,)
    theta_1: np.ndarray  # (C/r, C)
    theta_2: np.ndarray  # (C, C/r)
    ln_gain: np.ndarray  # (C/r,)
    ln_bias: np.ndarray  # (C/r,)
    r: int = DEFAULT_RATIO
    eps: float = LN_EPS

    def __post_init__(self):
        c = self.theta_k.shape[0] if self.theta_k.ndim == 1 else -1
        if c <= 0:
            raise InvalidArgumentError("theta_k must be a non-empty vector")
        if self.r < 1 or c % self.r:
            raise InvalidArgumentError(f"channels {c} not divisible by ratio {self.r}")
        hidden = c // self.r
        expected = {
            "theta_1": (hidden, c),
            "theta_2": (c, hidden),
            "ln_gain": (hidden,),
            "ln_bias": (hidden,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidArgumentError(
                    f"{name}: expected shape {shape}, got {getattr(self, name).shape}"
                )

    @property
    def channels(self) -> int:
        return self.theta_k.shape[0]

    @classmethod
    def random(cls, channels: int, r: int = DEFAULT_RATIO, seed: int = 0, scale: float = 0.1) -> "GcmParams":
        """Seeded uniform init in ``[-scale, scale]``; LN starts as identity (gain 1, bias 0)."""
        if channels % r:
            raise InvalidArgumentError(f"channels {channels} not divisible by ratio {r}")
        rng = np.random.default_rng(seed)
        hidden = channels // r
        return cls(
            theta_k=rng.uniform(-scale, scale, channels),
            theta_1=rng.uniform(-scale, scale, (hidden, channels)),
            theta_2=rng.uniform(-scale, scale, (channels, hidden)),
            ln_gain=np.ones(hidden),
            ln_bias=np.zeros(hidden),
            r=r,
        )


def _flatten(x: np.ndarray, channels: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[0] != channels or x.shape[1] < 1:
        raise InvalidArgumentError(f"expected a ({channels}, N_p) or ({channels}, H, W) map, got {np.shape(x)}")
    return x


def attention_weights(x: np.ndarray, theta_k: np.ndarray) -> np.ndarray:
    """Softmax over positions of the 1x1 projection ``theta_k . X_j``."""
    theta_k = np.asarray(theta_k, dtype=np.float64)
    x = _flatten(x, theta_k.shape[0])
    logits = np.array([math.fsum(theta_k * x[:, j]) for j in range(x.shape[1])])
    e = np.exp(logits - logits.max())
    return e / math.fsum(e)


def global_context(x: np.ndarray, theta_k: np.ndarray) -> np.ndarray:
    """Attention-pooled C-vector ``sum_j alpha_j X_j``."""
    x = _flatten(x, np.asarray(theta_k).shape[0])
    alpha = attention_weights(x, theta_k)
    weighted = x * alpha
    return np.array([math.fsum(row) for row in weighted])


def context_delta(x: np.ndarray, params: GcmParams) -> np.ndarray:
    """The position-independent term added to every position."""
    ctx = global_context(x, params.theta_k)
    hidden = layer_norm(params.theta_1 @ ctx, params.ln_gain, params.ln_bias, params.eps)
    return params.theta_2 @ relu(hidden)


def gcm_forward(x: np.ndarray, params: GcmParams) -> np.ndarray:
    """``Z_i = X_i + theta_2 ReLU(LN(theta_1 sum_j alpha_j X_j)))`` for every position i."""
    x = np.asarray(x, dtype=np.float64)
    flat = _flatten(x, params.channels)
    if not np.all(np.isfinite(flat)):
        raise InvalidArgumentError("feature map contains non-finite values")
    delta = context_delta(flat, params)
    return (flat + delta[:, None]).reshape(x.shape)
