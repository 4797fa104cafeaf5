"""Training losses, in numpy (with analytic gradients) and in torch.

Both losses only look at pixels where the ground truth is valid (> 0).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..core import as_depth
from ..errors import ConfigurationError, ContractError, DomainError, EmptyEvaluationError


@dataclass(frozen=True)
class LossConfig:
    lambda_si: float = 0.85
    mu: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.lambda_si <= 1.0:
            raise ConfigurationError("lambda_si must lie in [0, 1]")
        if self.mu < 0:
            raise ConfigurationError("mu must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(pred, gt):
    p = np.asarray(pred.values if hasattr(pred, "values") else pred, dtype=np.float64)
    g = as_depth(gt).values.astype(np.float64)
    if p.shape != g.shape:
        raise ContractError(f"pred shape {p.shape} != gt shape {g.shape}")
    return p, g, g > 0


def loss_si(pred, gt, lambda_si: float = 0.85) -> tuple[float, np.ndarray]:
    """Scale-invariant log loss and its gradient with respect to ``pred``.

    ``mean(delta**2) - lambda * mean(delta)**2`` with
    ``delta = log(pred) - log(gt)`` over gt-valid pixels.
    """
    p, g, v = _pair(pred, gt)
    n = int(np.count_nonzero(v))
    if n == 0:
        raise EmptyEvaluationError("gt has no valid pixel")
    if np.any(p[v] <= 0):
        raise DomainError("prediction must be positive wherever gt is valid")
    delta = np.log(p[v]) - np.log(g[v])
    total = delta.sum()
    value = float(np.dot(delta, delta) / n - lambda_si * total * total / (n * n))
    grad = np.zeros_like(p)
    grad[v] = (2.0 * delta / n - 2.0 * lambda_si * total / (n * n)) / p[v]
    return value, grad


def loss_comb(pred, gt) -> tuple[float, np.ndarray]:
    """``mean(|e| + e**2)`` over gt-valid pixels, ``e = pred - gt``, with gradient."""
    p, g, v = _pair(pred, gt)
    n = int(np.count_nonzero(v))
    if n == 0:
        raise EmptyEvaluationError("gt has no valid pixel")
    e = p[v] - g[v]
    value = float(np.sum(np.abs(e) + e * e) / n)
    grad = np.zeros_like(p)
    grad[v] = (np.sign(e) + 2.0 * e) / n
    return value, grad


def loss_total(final, initial_metric, gt, cfg: LossConfig = LossConfig()) -> float:
    comb, _ = loss_comb(final, gt)
    if cfg.mu == 0:
        return comb
    si, _ = loss_si(initial_metric, gt, cfg.lambda_si)
    return comb + cfg.mu * si


# ------------------------------------------------------------------ torch


def si_loss_torch(pred: torch.Tensor, gt: torch.Tensor, lambda_si: float = 0.85) -> torch.Tensor:
    """Per-sample SI loss averaged over samples that have any valid pixel.

    ``pred`` and ``gt`` are ``(B, 1, H, W)``; returns a scalar (0 if the whole
    batch is empty).
    """
    valid = gt > 0
    n = valid.flatten(1).sum(1).to(pred.dtype)
    safe_pred = torch.where(valid, pred, torch.ones_like(pred))
    safe_gt = torch.where(valid, gt, torch.ones_like(gt))
    delta = torch.where(valid, torch.log(safe_pred) - torch.log(safe_gt), torch.zeros_like(pred))
    s1 = delta.flatten(1).sum(1)
    s2 = (delta * delta).flatten(1).sum(1)
    has = n > 0
    if not bool(has.any()):
        return pred.sum() * 0.0
    n_ = n[has]
    per = s2[has] / n_ - lambda_si * s1[has] ** 2 / n_ ** 2
    return per.mean()


def comb_loss_torch(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    valid = gt > 0
    n = valid.flatten(1).sum(1).to(pred.dtype)
    e = torch.where(valid, pred - gt, torch.zeros_like(pred))
    per_sum = (e.abs() + e * e).flatten(1).sum(1)
    has = n > 0
    if not bool(has.any()):
        return pred.sum() * 0.0
    return (per_sum[has] / n[has]).mean()
