"""Central finite-difference gradient checks in float64."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward
from . import functional as F


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], step: float = 1e-3,
              rng: np.random.Generator | None = None, max_entries: int | None = None) -> float:
    """Return the worst relative error between autodiff and finite differences.

    ``fn`` maps float64 tensors to a tensor of any shape; it is contracted with
    a fixed random projection so the whole Jacobian is exercised. Relative
    error is ``|a - n| / max(|a| + |n|, 1e-12)`` taken over the gradient
    vector of each input (norms), so isolated tiny entries do not dominate.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = fn(*leaves)
    proj = rng.standard_normal(out.shape)

    def scalar(vals):
        ts = [Tensor(v, dtype=np.float64) for v in vals]
        return float(np.sum(fn(*ts).data * proj))

    loss = F.sum_all(F.mul(out, Tensor(proj, dtype=np.float64)))
    backward(loss)

    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])
        flat_idx = np.arange(arrays[i].size)
        if max_entries is not None and flat_idx.size > max_entries:
            flat_idx = rng.choice(flat_idx, size=max_entries, replace=False)
        numeric = np.zeros(flat_idx.size)
        for j, k in enumerate(flat_idx):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i].reshape(-1)[k] += step
            minus[i].reshape(-1)[k] -= step
            numeric[j] = (scalar(plus) - scalar(minus)) / (2 * step)
        a = analytic.reshape(-1)[flat_idx]
        err = np.linalg.norm(a - numeric) / max(np.linalg.norm(a) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(err))
    return worst
