"""Model and training configuration.

Two presets are provided for each config: ``toy`` for CPU-scale experiments
and ``full`` for the full-size protocol. Channel widths of the full preset
are not published values; they only fix a plausible full-scale geometry for
compute accounting.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

SIMILARITIES = ("dot", "neg_l2")
ATTENTION_MODES = ("verbatim", "standard")


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass
class ModelConfig:
    in_channels: int = 3
    # deblurring branch
    base_channels: int = 16
    dense_block_count: int = 1
    res_block_count: int = 2
    downsample_stride: int = 4
    fuse_kernel: int = 3
    # memory branch
    key_channels: int = 16
    value_channels: int = 32
    decode_channels: int = 8
    codec_block_count: int = 1
    encoder_stride: int = 4
    decoder_upscale: int = 4
    # recurrence / schedule
    scales: int = 3
    periods: tuple[int, ...] = (5, 2, 1)
    capacity: int = 5
    similarity: str = "dot"
    attention_mode: str = "verbatim"
    use_memory: bool = True
    bidirectional: bool = True
    drop_recurrent_carry: bool = False
    prev_from_restored: bool = True

    def __post_init__(self):
        self.periods = tuple(int(p) for p in self.periods)
        self.validate()

    def validate(self) -> None:
        positive = (
            "in_channels", "base_channels", "dense_block_count", "res_block_count",
            "key_channels", "value_channels", "decode_channels", "codec_block_count",
            "capacity", "fuse_kernel",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.scales not in (1, 2, 3):
            raise ConfigError(f"scales must be 1, 2 or 3, got {self.scales}")
        if len(self.periods) != 3 or min(self.periods) < 1:
            raise ConfigError(f"periods must be three integers >= 1, got {self.periods}")
        if self.encoder_stride != self.decoder_upscale:
            raise ConfigError("encoder_stride must equal decoder_upscale")
        for name in ("downsample_stride", "encoder_stride"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigError(f"{name} must be a power of two")
        if self.fuse_kernel % 2 == 0:
            raise ConfigError("fuse_kernel must be odd")
        if self.similarity not in SIMILARITIES:
            raise ConfigError(f"similarity must be one of {SIMILARITIES}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")

    @property
    def pad_multiple(self) -> int:
        """Every pyramid level is padded to this multiple so keys tile exactly."""
        return self.downsample_stride * self.encoder_stride

    def period(self, scale: int) -> int:
        if scale not in (1, 2, 3):
            raise ConfigError(f"unknown scale {scale}")
        return self.periods[scale - 1]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        params = dict(
            base_channels=64, dense_block_count=3, res_block_count=6,
            key_channels=64, value_channels=128, decode_channels=32,
            codec_block_count=2,
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["periods"] = list(self.periods)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_epochs: list[int] = field(default_factory=lambda: [200, 350, 450, 500])
    decay_factor: float = 0.5
    total_epochs: int = 600
    steps_per_epoch: int = 100
    batch_size: int = 8
    patch: int = 256
    subseq_len: int = 8
    charbonnier_eps: float = 1e-3
    scale_weights: list[float] | None = None
    eval_every: int = 1

    def __post_init__(self):
        self.decay_epochs = [int(e) for e in self.decay_epochs]
        self.validate()

    def validate(self) -> None:
        for name in ("lr", "beta1", "beta2", "adam_eps", "decay_factor", "charbonnier_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("total_epochs", "steps_per_epoch", "batch_size", "patch", "subseq_len", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ConfigError("decay_epochs must be strictly increasing")
        if any(e < 1 for e in self.decay_epochs):
            raise ConfigError("decay_epochs must be positive")
        if self.scale_weights is not None and any(w <= 0 for w in self.scale_weights):
            raise ConfigError("scale_weights must be positive")

    def weights_for(self, scales: int) -> list[float]:
        if self.scale_weights is None:
            return [1.0 / scales] * scales
        if len(self.scale_weights) < scales:
            raise ConfigError(f"need {scales} scale weights, got {len(self.scale_weights)}")
        return list(self.scale_weights[:scales])

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        params = dict(
            lr=2e-3, decay_epochs=[40, 44, 47, 50], total_epochs=50,
            steps_per_epoch=10, batch_size=2, patch=64, subseq_len=8,
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Read a JSON file with optional ``preset``, ``model`` and ``train`` sections."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return configs_from_dict(raw)


def configs_from_dict(raw: dict[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    preset = raw.get("preset", "toy")
    if preset not in ("toy", "full"):
        raise ConfigError(f"unknown preset {preset!r}")
    model = getattr(ModelConfig, preset)(**raw.get("model", {}))
    train = getattr(TrainConfig, preset)(**raw.get("train", {}))
    return model, train
