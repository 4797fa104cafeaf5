"""End-to-end depth completion: relative depth -> metric scale -> adaptive propagation.

Training runs entirely in torch (``DepthCompletionNet``). The inference
helpers at the bottom return numpy rasters and hand the propagation itself
to :mod:`depthprompt.propagation`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import DepthRaster, ImageRaster, SparseDepth, as_depth
from ..errors import ConfigurationError, ContractError
from ..propagation import AffinityField, PropagationConfig, normalize_affinity, propagate
from ..scale import apply_scale, fit_scale_or_unit
from .models import FoundationModel, PromptModule


@dataclass(frozen=True)
class Variant:
    """One point on the ablation axes; ``full`` is all defaults."""

    use_prompt: bool = True
    pretrained_foundation: bool = True
    use_ls: bool = True
    use_spn: bool = True
    rda: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


VARIANTS: dict[str, Variant] = {
    "full": Variant(),
    "no_prompt": Variant(use_prompt=False),
    "no_pretrain": Variant(pretrained_foundation=False),
    "no_ls": Variant(use_ls=False),
    "no_spn": Variant(use_spn=False),
    "rda": Variant(rda=True),
}


@dataclass(frozen=True)
class PipelineConfig:
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    use_ls: bool = True
    use_spn: bool = True


@dataclass
class FeaturePyramid:
    """Feature maps ordered fine to coarse, each ``(1, C, h, w)``."""

    levels: list

    @property
    def shapes(self) -> list[tuple[int, int, int]]:
        return [tuple(lvl.shape[1:]) for lvl in self.levels]

    def __len__(self) -> int:
        return len(self.levels)


# ------------------------------------------------------------ bias tuning


@dataclass
class BiasTuning:
    trainable_names: list[str]
    trainable: int
    total: int

    @property
    def fraction(self) -> float:
        return self.trainable / self.total


def apply_bias_tuning(model: nn.Module) -> BiasTuning:
    """Freeze every parameter of ``model`` except its bias terms."""
    names = []
    trainable = total = 0
    for name, p in model.named_parameters():
        is_bias = name.rsplit(".", 1)[-1] == "bias"
        p.requires_grad_(is_bias)
        total += p.numel()
        if is_bias:
            names.append(name)
            trainable += p.numel()
    if not names:
        raise ConfigurationError("model has no bias terms to tune")
    return BiasTuning(names, trainable, total)


# ------------------------------------------------------------ torch ops


def ls_scale_torch(rel: torch.Tensor, sparse: torch.Tensor) -> torch.Tensor:
    """Per-sample closed-form scale ``sum(d*s)/sum(d*d)``; 1 where the support is empty."""
    valid = (sparse > 0).to(rel.dtype)
    num = (rel * sparse * valid).flatten(1).sum(1)
    den = (rel * rel * valid).flatten(1).sum(1)
    ok = den > 0
    p = torch.where(ok, num / torch.where(ok, den, torch.ones_like(den)), torch.ones_like(den))
    return p.view(-1, 1, 1, 1)


def normalize_affinity_torch(raw: torch.Tensor) -> torch.Tensor:
    w = raw.abs()
    total = w.sum(1, keepdim=True)
    dead = total == 0
    w = w / torch.where(dead, torch.ones_like(total), total)
    if bool(dead.any()):
        ident = torch.zeros_like(w)
        ident[:, w.shape[1] // 2] = 1.0
        w = torch.where(dead, ident, w)
    return w


def propagate_torch(initial: torch.Tensor, seeds: torch.Tensor, weights: torch.Tensor,
                    cfg: PropagationConfig) -> torch.Tensor:
    """Differentiable twin of :func:`depthprompt.propagation.propagate` for ``(B, 1, H, W)`` maps."""
    b, _, h, w = initial.shape
    c2 = weights.shape[1]
    c = int(round(c2 ** 0.5))
    r = c // 2
    center = c2 // 2
    w_center = weights[:, center:center + 1]
    mask = torch.ones(c2, dtype=weights.dtype, device=weights.device)
    mask[center] = 0
    w_nb = weights * mask.view(1, -1, 1, 1)
    anchor = w_center * initial
    valid = seeds > 0
    cur = initial
    for _ in range(cfg.n_steps):
        padded = F.pad(cur, (r, r, r, r), mode="replicate")
        patches = F.unfold(padded, c).view(b, c2, h, w)
        cur = anchor + (w_nb * patches).sum(1, keepdim=True)
        if cfg.seed_reinjection:
            cur = torch.where(valid, seeds, cur)
    return cur


class DepthCompletionNet(nn.Module):
    def __init__(self, foundation: FoundationModel, prompt: PromptModule,
                 pipeline: PipelineConfig = PipelineConfig()):
        super().__init__()
        self.foundation = foundation
        self.prompt = prompt
        self.pipeline = pipeline

    def forward(self, image: torch.Tensor, sparse: torch.Tensor) -> dict:
        rel, image_feats = self.foundation(image)
        if self.pipeline.use_ls:
            initial = rel * ls_scale_torch(rel, sparse)
        else:
            initial = rel
        out = {"relative": rel, "initial": initial}
        if not self.pipeline.use_spn:
            out["final"] = initial
            return out
        raw = self.prompt.decode(self.prompt.encode(sparse), image_feats)
        weights = normalize_affinity_torch(raw)
        final = propagate_torch(initial, sparse, weights, self.pipeline.propagation)
        has_seeds = (sparse > 0).flatten(1).any(1).view(-1, 1, 1, 1)
        out["final"] = torch.where(has_seeds, final, initial)
        out["affinity"] = weights
        return out


# -------------------------------------------------------- numpy-facing API


def _image_tensor(image) -> torch.Tensor:
    arr = image.values if isinstance(image, ImageRaster) else ImageRaster(image).values
    return torch.from_numpy(arr.astype(np.float32))[None]


def _depth_tensor(d: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.asarray(d, dtype=np.float32))[None, None]


@torch.no_grad()
def encode_prompt(sparse, module: PromptModule, valid: np.ndarray | None = None) -> FeaturePyramid:
    """Prompt pyramid for a sparse map.

    ``valid`` overrides the validity mask; values outside it never reach the
    network.
    """
    values = sparse.values if hasattr(sparse, "values") else np.asarray(sparse)
    v = (values > 0) if valid is None else np.asarray(valid, dtype=bool)
    values = np.where(v, values, 0.0)
    return FeaturePyramid(module.encode(_depth_tensor(values), _depth_tensor(v)))


@torch.no_grad()
def predict_relative(image, model: FoundationModel) -> tuple[DepthRaster, FeaturePyramid]:
    rel, feats = model(_image_tensor(image))
    return DepthRaster(rel[0, 0].double().numpy()), FeaturePyramid(feats)


@torch.no_grad()
def decode_affinity(prompt: FeaturePyramid, image_feats: FeaturePyramid, module: PromptModule) -> AffinityField:
    """Raw (un-normalized) ``C*C``-channel affinity at full resolution."""
    try:
        raw = module.decode(prompt.levels, image_feats.levels)
    except ValueError as exc:
        raise ContractError(str(exc)) from exc
    return AffinityField(raw[0].double().numpy())


def forward_pipeline(image, sparse, model: FoundationModel, module: PromptModule,
                     cfg: PipelineConfig = PipelineConfig(), *, backend: str | None = None
                     ) -> tuple[DepthRaster, DepthRaster]:
    """Return ``(final, initial_metric)`` for one scene.

    With no valid seed the pipeline degrades to the monocular prediction at
    unit scale and skips propagation.
    """
    sparse = as_depth(sparse, SparseDepth)
    rel, image_feats = predict_relative(image, model)
    if rel.shape != sparse.shape:
        raise ContractError(f"image {rel.shape} and sparse {sparse.shape} sizes differ")
    if cfg.use_ls:
        initial = apply_scale(rel, fit_scale_or_unit(rel, sparse))
    else:
        initial = rel
    if not cfg.use_spn or sparse.valid_count == 0:
        return initial, initial
    raw = decode_affinity(encode_prompt(sparse, module), image_feats, module)
    final = propagate(initial, sparse, normalize_affinity(raw), cfg.propagation, backend=backend)
    return final, initial
