"""Run configuration (JSON documents whose keys mirror the dataclass fields)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..errors import ConfigurationError
from ..net.losses import LossConfig
from ..net.pipeline import VARIANTS
from ..propagation import PropagationConfig
from ..sensors import BiasSpec, SceneSpec


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    count: int

    def seeds(self) -> range:
        return range(self.seed, self.seed + self.count)


def default_splits() -> dict[str, SplitSpec]:
    return {
        "pretrain": SplitSpec(100_000, 256),
        "train": SplitSpec(200_000, 128),
        "val": SplitSpec(300_000, 16),
        "test": SplitSpec(400_000, 64),
    }


@dataclass(frozen=True)
class RunConfig:
    corpus: str = "corpus"
    splits: dict = field(default_factory=default_splits)
    scene: SceneSpec = field(default_factory=SceneSpec)
    train_spec: BiasSpec = field(default_factory=lambda: BiasSpec(sample_count=100))
    test_spec: BiasSpec = field(default_factory=lambda: BiasSpec(sample_count=100))
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    variant: str = "full"
    stencil_size: int = 7
    learning_rate: float = 2e-3
    decay_factors: tuple = (0.5, 0.1, 0.05)
    decay_milestones: Optional[tuple] = None
    epochs: int = 12
    batch_size: int = 8
    rda_enabled: bool = False
    # fraction of epochs over which the RDA count floor falls from the training density to 1
    rda_warmup: float = 0.6
    pretrain_epochs: int = 8
    pretrain_batch_size: int = 16
    pretrain_learning_rate: float = 2e-3
    seed: int = 0
    foundation_checkpoint: Optional[str] = None
    checkpoint: str = "checkpoint"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.pretrain_learning_rate <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.rda_warmup <= 1:
            raise ConfigurationError("rda_warmup must lie in [0, 1]")
        if len(self.decay_factors) != len(self.milestones()):
            raise ConfigurationError("decay_factors and decay_milestones differ in length")
        spans = sorted((s.seed, s.seed + s.count, name) for name, s in self.splits.items())
        for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ConfigurationError(f"splits {an!r} and {bn!r} share scene seeds")

    def milestones(self) -> tuple[int, ...]:
        """Epochs at which the decay factors kick in.

        Default: the 10/15/20-of-25 ladder scaled to ``epochs``.
        """
        if self.decay_milestones is not None:
            return tuple(int(m) for m in self.decay_milestones)
        return tuple(int(round(self.epochs * f)) for f in (10 / 25, 15 / 25, 20 / 25))

    def lr_factor(self, epoch: int) -> float:
        factor = 1.0
        for m, f in zip(self.milestones(), self.decay_factors):
            if epoch >= m:
                factor = f
        return factor

    def rda_floor(self, epoch: int, n_max: int) -> int:
        """Smallest RDA sample count at ``epoch``: log-linear from ``n_max`` down to 1."""
        span = self.rda_warmup * self.epochs
        frac = 1.0 if span <= 0 else min(1.0, epoch / span)
        return max(1, int(round(n_max ** (1.0 - frac))))

    @property
    def variant_flags(self):
        return VARIANTS[self.variant]

    # ----------------------------------------------------------- (de)serialization

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (BiasSpec, SceneSpec)):
                v = v.to_dict()
            elif isinstance(v, (PropagationConfig, LossConfig)):
                v = asdict(v)
            elif f.name == "splits":
                v = {k: {"seed": s.seed, "count": s.count} for k, s in v.items()}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        conv = {
            "scene": SceneSpec.from_dict,
            "train_spec": BiasSpec.from_dict,
            "test_spec": BiasSpec.from_dict,
            "propagation": lambda x: PropagationConfig(**x),
            "loss": lambda x: LossConfig(**x),
            "splits": lambda x: {k: SplitSpec(int(v["seed"]), int(v["count"])) for k, v in x.items()},
        }
        for key, fn in conv.items():
            if key in d and isinstance(d[key], dict):
                d[key] = fn(d[key])
        for key in ("decay_factors", "decay_milestones"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_json())
