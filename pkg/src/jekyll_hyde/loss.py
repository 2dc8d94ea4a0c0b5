"""Masked background loss for the mask/background pair, and plain BCE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .tensor_core import Tensor

DEFAULT_EPS = 1e-3
DEFAULT_ALPHA = 1.0
BCE_CLAMP = 1e-12


@dataclass
class LossBreakdown:
    delta: Tensor
    delta_sq: Tensor
    masked: Tensor
    background_term: Tensor
    mask_cost: Tensor
    total: Tensor
    alpha: float
    epsilon: float

    def to_dict(self) -> dict:
        """Scalar fields only, for training logs."""
        return {
            "background_term": float(self.background_term.item()),
            "mask_cost": float(self.mask_cost.item()),
            "total": float(self.total.item()),
            "alpha": self.alpha,
            "epsilon": self.epsilon,
        }


def frame_differential(x: Tensor, background: Tensor) -> Tensor:
    """Subtract the single background frame from every input frame."""
    if x.ndim != 5 or background.ndim != 5:
        raise ValueError("frame_differential expects (K, 1, N, W, H) input and (K, 1, 1, W, H) background")
    if background.shape[2] != 1 or x.shape[:2] != background.shape[:2] or x.shape[3:] != background.shape[3:]:
        raise ValueError(f"background {background.shape} does not match input {x.shape}")
    return tc.sub(x, background)


def dual_loss(x: Tensor, mask: Tensor, background: Tensor, alpha: float = DEFAULT_ALPHA,
              eps: float = DEFAULT_EPS) -> LossBreakdown:
    """``mean(-ln(J + eps) * (x - H)^2) + alpha * mean(J)``.

    Means run over every element, batch included. ``mask`` must lie in [0, 1].
    """
    if mask.shape != x.shape:
        raise ValueError(f"mask shape {mask.shape} != input shape {x.shape}")
    if np.any(mask.data < 0) or np.any(mask.data > 1):
        raise ValueError("mask values must lie in [0, 1]")
    if alpha < 0 or eps <= 0:
        raise ValueError("alpha must be non-negative and eps positive")
    delta = frame_differential(x, background)
    delta_sq = tc.square(delta)
    masked = tc.mul(tc.neg_log_eps(mask, eps), delta_sq)
    background_term = tc.mean_all(masked)
    mask_cost = tc.mul(tc.mean_all(mask), alpha)
    total = tc.add(background_term, mask_cost)
    return LossBreakdown(delta, delta_sq, masked, background_term, mask_cost, total, float(alpha), float(eps))


def optimal_mask(delta_sq, alpha=DEFAULT_ALPHA, eps=DEFAULT_EPS) -> np.ndarray:
    """Per-pixel minimiser over J in [0, 1] of ``-ln(J + eps) * d2 + alpha * J``.

    Setting the derivative ``-d2 / (J + eps) + alpha`` to zero gives
    ``J = d2 / alpha - eps``; the objective is convex so clamping is exact.
    Arguments broadcast against each other.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    d2 = np.asarray(delta_sq, dtype=np.float64)
    return np.clip(d2 / alpha - np.asarray(eps, dtype=np.float64), 0.0, 1.0)


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy; log arguments are clamped at 1e-12."""
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    if y.shape != pred.shape:
        raise ValueError(f"target shape {y.shape} != prediction shape {pred.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_loss target must be binary")
    p = pred.data
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("bce_loss predictions must lie in [0, 1]")
    y = y.astype(p.dtype)
    lo = p.dtype.type(BCE_CLAMP)
    p_pos = np.maximum(p, lo)
    p_neg = np.maximum(1 - p, lo)
    n = p.size
    per = -(y * np.log(p_pos) + (1 - y) * np.log(p_neg))
    val = np.asarray(per.astype(np.float64).mean(), dtype=p.dtype)

    def bw(g):
        d = -y * np.where(p > lo, 1.0 / p_pos, 0.0) + (1 - y) * np.where(1 - p > lo, 1.0 / p_neg, 0.0)
        return ((g / n) * d.astype(p.dtype),)

    return Tensor.from_op(val, "bce", (pred,), bw)
