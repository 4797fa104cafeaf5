"""Least-squares metric scale for relative depth.

The scale is the scalar ``p`` minimising ``||p * d - s||`` over pixels valid in
both the relative map ``d`` and the sparse measurements ``s``; its closed
form is ``sum(d * s) / sum(d * d)``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import DepthRaster, as_depth
from .errors import ContractError, DegenerateSupportError, NoSupportError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaleFit:
    p_hat: float
    n_support: int
    residual_norm: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def fit_scale(relative, sparse) -> ScaleFit:
    d_all = as_depth(relative).values
    s_all = as_depth(sparse).values
    if d_all.shape != s_all.shape:
        raise ContractError(f"shape mismatch {d_all.shape} vs {s_all.shape}")
    support = (d_all > 0) & (s_all > 0)
    n = int(np.count_nonzero(support))
    if n == 0:
        raise NoSupportError("no pixel is valid in both rasters")
    d = d_all[support].astype(np.float64)
    s = s_all[support].astype(np.float64)
    dd = float(np.dot(d, d))
    if dd == 0.0:
        raise DegenerateSupportError("relative depth is zero on the whole support")
    p = float(np.dot(d, s)) / dd
    if not math.isfinite(p):
        raise DegenerateSupportError(f"non-finite scale {p}")
    if p <= 0:
        log.warning("least-squares scale is non-positive (p_hat=%g)", p)
    residual = float(np.linalg.norm(p * d - s))
    return ScaleFit(p_hat=p, n_support=n, residual_norm=residual)


def apply_scale(relative, fit: ScaleFit | float) -> DepthRaster:
    p = fit.p_hat if isinstance(fit, ScaleFit) else float(fit)
    rel = as_depth(relative)
    return DepthRaster(rel.values.astype(np.float64) * p)


def fit_scale_or_unit(relative, sparse) -> ScaleFit:
    """``fit_scale`` with the pipeline's fallback to ``p_hat = 1``.

    Used when the sparse input is empty or carries no usable support.
    """
    try:
        return fit_scale(relative, sparse)
    except (NoSupportError, DegenerateSupportError):
        return ScaleFit(p_hat=1.0, n_support=0, residual_norm=math.nan)
