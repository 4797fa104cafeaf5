"""Networks: a small relative-depth foundation model and the depth prompt module."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class FoundationConfig:
    channels: tuple[int, ...] = (16, 32, 48, 64)
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "in_channels": self.in_channels}


@dataclass(frozen=True)
class PromptConfig:
    channels: tuple[int, ...] = (16, 24, 32, 48)
    decoder_channels: tuple[int, ...] = (16, 24, 32)
    image_channels: tuple[int, ...] = (16, 32, 48, 64)
    stencil_size: int = 7
    use_prompt: bool = True
    depth_scale: float = 10.0

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("channels", "decoder_channels", "image_channels"):
            d[k] = list(d[k])
        return d


def conv(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.ReLU(inplace=True))


def _upsample_to(x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)


class FoundationModel(nn.Module):
    """Encoder-decoder predicting one strictly positive relative-depth channel.

    ``forward`` returns ``(relative_depth, [F_1, F_1/2, F_1/4, F_1/8])`` where
    the list holds the encoder pyramid.
    """

    def __init__(self, cfg: FoundationConfig = FoundationConfig()):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.encoder = nn.ModuleList(
            [conv(cfg.in_channels, ch[0])] + [conv(ch[i - 1], ch[i], stride=2) for i in range(1, len(ch))]
        )
        self.decoder = nn.ModuleList(
            [conv(ch[i + 1] + ch[i], ch[i]) for i in reversed(range(len(ch) - 1))]
        )
        self.head = nn.Conv2d(ch[0], 1, 3, 1, 1)

    def forward(self, image: torch.Tensor):
        feats = []
        x = image
        for block in self.encoder:
            x = block(x)
            feats.append(x)
        y = feats[-1]
        for block, skip in zip(self.decoder, feats[-2::-1]):
            y = block(torch.cat([_upsample_to(y, skip), skip], dim=1))
        rel = F.softplus(self.head(y)) + 1e-3
        return rel, feats


class PromptModule(nn.Module):
    """Depth prompt encoder plus affinity decoder.

    The encoder sees ``(depth / depth_scale, validity)``. The decoder walks
    the pyramid from the deepest level up, concatenating at each scale the
    upsampled running features, the prompt features and the image features,
    and emits ``stencil_size**2`` raw affinity channels at full resolution.
    With ``use_prompt=False`` the encoder is absent and the decoder only sees
    image features.
    """

    def __init__(self, cfg: PromptConfig = PromptConfig()):
        super().__init__()
        self.cfg = cfg
        pc = cfg.channels if cfg.use_prompt else (0,) * len(cfg.image_channels)
        ic = cfg.image_channels
        dc = cfg.decoder_channels
        if len(pc) != len(ic) or len(dc) != len(ic) - 1:
            raise ValueError("pyramid depths of prompt, image and decoder channels disagree")
        if cfg.use_prompt:
            self.encoder = nn.ModuleList(
                [conv(2, pc[0])] + [conv(pc[i - 1], pc[i], stride=2) for i in range(1, len(pc))]
            )
        else:
            self.encoder = None
        self.bottleneck = conv(pc[-1] + ic[-1], dc[-1])
        blocks = []
        running = dc[-1]
        for i in reversed(range(len(ic) - 1)):
            blocks.append(conv(running + pc[i] + ic[i], dc[i]))
            running = dc[i]
        self.decoder = nn.ModuleList(blocks)
        c2 = cfg.stencil_size ** 2
        self.head = nn.Conv2d(running, c2, 3, 1, 1)
        nn.init.normal_(self.head.weight, std=1e-3)
        with torch.no_grad():
            # start close to "mostly trust the initial depth"
            self.head.bias.fill_(0.1)
            self.head.bias[c2 // 2] = 1.0

    def encode(self, sparse: torch.Tensor, valid: torch.Tensor | None = None) -> list[torch.Tensor]:
        if self.encoder is None:
            return []
        if valid is None:
            valid = (sparse > 0).to(sparse.dtype)
        x = torch.cat([sparse * valid / self.cfg.depth_scale, valid], dim=1)
        feats = []
        for block in self.encoder:
            x = block(x)
            feats.append(x)
        return feats

    def decode(self, prompt: list[torch.Tensor], image_feats: list[torch.Tensor]) -> torch.Tensor:
        if self.encoder is not None:
            if len(prompt) != len(image_feats):
                raise ValueError("prompt and image pyramids have different depths")
            for p, i in zip(prompt, image_feats):
                if p.shape[-2:] != i.shape[-2:]:
                    raise ValueError(f"pyramid level size mismatch {tuple(p.shape)} vs {tuple(i.shape)}")
            deep = torch.cat([prompt[-1], image_feats[-1]], dim=1)
        else:
            deep = image_feats[-1]
        y = self.bottleneck(deep)
        for j, block in enumerate(self.decoder):
            lvl = len(image_feats) - 2 - j
            parts = [_upsample_to(y, image_feats[lvl])]
            if self.encoder is not None:
                parts.append(prompt[lvl])
            parts.append(image_feats[lvl])
            y = block(torch.cat(parts, dim=1))
        return self.head(y)


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)
