"""Foundation pretraining and depth-completion training loops."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..errors import DivergenceError
from ..net.checkpoint import (foundation_architecture, load_foundation, net_architecture,
                              save_checkpoint)
from ..net.losses import comb_loss_torch, si_loss_torch
from ..net.models import FoundationConfig, FoundationModel, PromptConfig, PromptModule
from ..net.pipeline import DepthCompletionNet, PipelineConfig, apply_bias_tuning
from ..sensors import BiasSpec, mask_range, rda_sample, simulate_sensor
from .config import RunConfig
from .corpus import Corpus, ensure_corpus

log = logging.getLogger(__name__)


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _lr_lambda(cfg: RunConfig, milestones, factors):
    def fn(epoch: int) -> float:
        f = 1.0
        for m, k in zip(milestones, factors):
            if epoch >= m:
                f = k
        return f
    return fn


def open_corpus(cfg: RunConfig) -> Corpus:
    return ensure_corpus(cfg.corpus, cfg.scene, cfg.splits)


# -------------------------------------------------------------- pretraining


def pretrain_foundation(cfg: RunConfig, corpus: Optional[Corpus] = None, out: Optional[str] = None) -> FoundationModel:
    """Fit the relative-depth backbone on the ``pretrain`` split with the SI loss alone."""
    corpus = corpus or open_corpus(cfg)
    seed_everything(cfg.seed)
    images, gts, _ = corpus.split("pretrain")
    model = FoundationModel(FoundationConfig())
    opt = torch.optim.Adam(model.parameters(), lr=cfg.pretrain_learning_rate)
    epochs = cfg.pretrain_epochs
    milestones = tuple(int(round(epochs * f)) for f in (10 / 25, 15 / 25, 20 / 25))
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(cfg, milestones, cfg.decay_factors))
    rng = np.random.default_rng([cfg.seed, 1])
    img_t = torch.from_numpy(images)
    gt_t = torch.from_numpy(gts)[:, None]
    bs = cfg.pretrain_batch_size
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for start in range(0, len(order), bs):
            idx = torch.from_numpy(order[start:start + bs])
            rel, _ = model(img_t[idx])
            loss = si_loss_torch(rel, gt_t[idx], cfg.loss.lambda_si)
            if not torch.isfinite(loss):
                raise DivergenceError(f"pretraining diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        log.info("pretrain epoch %d  si=%.5f", epoch, total / len(order))
    model.eval()
    if out is not None:
        save_checkpoint(out, model, "foundation", foundation_architecture(model.cfg),
                        partition={"frozen": [], "tunable": [n for n, _ in model.named_parameters()]},
                        seeds={"seed": cfg.seed},
                        provenance={"split": "pretrain", "epochs": epochs, "config_digest": cfg.digest()})
    return model


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    checkpoint: Path
    probe_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    trainable_fraction: Optional[float] = None


def sparse_for(gt: np.ndarray, spec: BiasSpec, seed, rda: bool, floor: int = 1) -> np.ndarray:
    """Training-time sensor draw (count clipped to what the window offers).

    With ``rda`` the count is log-uniform between ``floor`` (or the spec's own
    minimum, whichever is larger) and the spec's count.
    """
    if rda:
        family = [replace(spec, sample_count_min=max(spec.sample_count_min or 1, floor))]
        return rda_sample(gt, family, seed, clip_count=True).values
    return simulate_sensor(gt, spec, seed, clip_count=True).values


def supervision_target(gt: np.ndarray, spec: BiasSpec) -> np.ndarray:
    """Ground truth restricted to the training sensor's range window."""
    lo, hi = spec.range_window
    if lo > 0 or math.isfinite(hi):
        return mask_range(gt, spec.range_window).values
    return gt


def build_model(cfg: RunConfig, foundation: Optional[FoundationModel] = None):
    """Assemble the network for ``cfg.variant``; returns ``(net, bias_tuning_or_None)``."""
    v = cfg.variant_flags
    if v.pretrained_foundation:
        if foundation is None:
            raise ValueError("a pretrained foundation model is required for this variant")
        foundation = copy.deepcopy(foundation)
        tuning = apply_bias_tuning(foundation)
    else:
        foundation = FoundationModel(FoundationConfig())
        tuning = None
    prompt = PromptModule(PromptConfig(stencil_size=cfg.stencil_size, use_prompt=v.use_prompt))
    pipeline = PipelineConfig(cfg.propagation, use_ls=v.use_ls, use_spn=v.use_spn)
    return DepthCompletionNet(foundation, prompt, pipeline), tuning


def _batch_loss(net, cfg: RunConfig, images, gts_sup, sparse):
    out = net(images, sparse)
    comb = comb_loss_torch(out["final"], gts_sup)
    si = si_loss_torch(out["initial"], gts_sup, cfg.loss.lambda_si)
    return comb + cfg.loss.mu * si


def train(cfg: RunConfig, corpus: Optional[Corpus] = None, foundation: Optional[FoundationModel] = None) -> TrainResult:
    """Train the prompt module (fully) and the foundation biases; write a checkpoint.

    The checkpoint directory also receives ``curve.csv`` (per-step loss and
    learning rate). A non-finite loss raises DivergenceError and leaves the
    last completed epoch's checkpoint in place.
    """
    corpus = corpus or open_corpus(cfg)
    v = cfg.variant_flags
    rda = cfg.rda_enabled or v.rda
    ckpt = Path(cfg.checkpoint)
    if v.pretrained_foundation and foundation is None:
        if cfg.foundation_checkpoint and (Path(cfg.foundation_checkpoint) / "manifest.json").is_file():
            foundation, _ = load_foundation(cfg.foundation_checkpoint)
        else:
            target = cfg.foundation_checkpoint or str(ckpt.parent / f"{ckpt.name}_foundation")
            foundation = pretrain_foundation(cfg, corpus, out=target)
    seed_everything(cfg.seed)
    net, tuning = build_model(cfg, foundation)
    params = [p for p in net.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(cfg, cfg.milestones(), cfg.decay_factors))

    images, gts, scene_seeds = corpus.split("train")
    sup = np.stack([supervision_target(g, cfg.train_spec) for g in gts])
    img_t = torch.from_numpy(images)
    sup_t = torch.from_numpy(sup.astype(np.float32))[:, None]

    # fixed probe batch for before/after comparisons
    n_probe = min(16, len(images))
    probe_sparse = torch.from_numpy(np.stack([
        sparse_for(gts[i], cfg.train_spec, [cfg.seed, 7, int(scene_seeds[i])], False) for i in range(n_probe)
    ]).astype(np.float32))[:, None]

    def probe() -> float:
        with torch.no_grad():
            return float(_batch_loss(net, cfg, img_t[:n_probe], sup_t[:n_probe], probe_sparse))

    result = TrainResult(ckpt, trainable_fraction=tuning.fraction if tuning else None)
    result.probe_losses.append(probe())
    rng = np.random.default_rng([cfg.seed, 2])
    rows = []
    step = 0
    bs = cfg.batch_size
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(len(images))
        total = 0.0
        floor = cfg.rda_floor(epoch, cfg.train_spec.sample_count)
        for start in range(0, len(order), bs):
            sel = order[start:start + bs]
            sparse = np.stack([
                sparse_for(gts[i], cfg.train_spec, [cfg.seed, epoch, int(scene_seeds[i])], rda, floor) for i in sel
            ]).astype(np.float32)
            idx = torch.from_numpy(sel)
            loss = _batch_loss(net, cfg, img_t[idx], sup_t[idx], torch.from_numpy(sparse)[:, None])
            if not torch.isfinite(loss):
                raise DivergenceError(f"loss became {loss.item()} at epoch {epoch} step {step}; "
                                      f"last good checkpoint: {ckpt if epoch else 'none'}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            rows.append((epoch, step, loss.item(), opt.param_groups[0]["lr"]))
            total += loss.item() * len(sel)
            step += 1
        sched.step()
        net.eval()
        result.epoch_losses.append(total / len(order))
        result.probe_losses.append(probe())
        log.info("epoch %d  loss=%.5f  probe=%.5f", epoch, result.epoch_losses[-1], result.probe_losses[-1])
        _save(net, cfg, tuning, result)
    if cfg.epochs == 0:
        _save(net, cfg, tuning, result)
    with open(ckpt / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss", "lr"])
        w.writerows(rows)
    return result


def _save(net: DepthCompletionNet, cfg: RunConfig, tuning, result: TrainResult) -> None:
    frozen = []
    if tuning is not None:
        frozen = [f"foundation.{n}" for n, p in net.foundation.named_parameters() if not p.requires_grad]
    tunable = [n for n, _ in net.named_parameters() if n not in frozen]
    arch = net_architecture(net)
    arch["variant"] = cfg.variant
    save_checkpoint(
        cfg.checkpoint, net, "completion", arch,
        partition={"frozen": frozen, "tunable": tunable},
        seeds={"seed": cfg.seed, "splits": {k: s.seed for k, s in cfg.splits.items()}},
        provenance={
            "config": cfg.to_dict(),
            "config_digest": cfg.digest(),
            "milestones": list(cfg.milestones()),
            "probe_losses": result.probe_losses,
            "epoch_losses": result.epoch_losses,
            "trainable_fraction": result.trainable_fraction,
        },
    )
