"""Declarative experiment configuration.

Every experiment is fully described by an :class:`ExperimentConfig` that
serializes to/from YAML round-trip stably. A short content hash of the
resolved config is embedded in checkpoints and results files so artifacts
can always be traced back to the exact settings that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from refgame.errors import ConfigError

ENV_DATA_PATH = "REFGAME_DATA"

REGIMES = ("pretrained_frozen", "random_frozen", "learned_end_to_end")
DUAL_TASK_MODES = ("none", "receiver_predicts", "sender_predicts")

# Appendix-recipe defaults for the rotation-loss weight and alternation flag.
ROTATION_WEIGHT_DEFAULTS = {"sender_predicts": 0.5, "receiver_predicts": 5.0}
ALTERNATE_DEFAULTS = {"sender_predicts": False, "receiver_predicts": True}


@dataclass
class AugmentConfig:
    """Base augmentation policy applied to every training image."""

    p_bri: float = 0.1
    p_con: float = 0.1
    p_sat: float = 0.1
    p_hue: float = 0.1
    p_grayscale: float = 0.1
    p_hflip: float = 0.5


@dataclass
class DataConfig:
    path: Optional[str] = None  # falls back to $REFGAME_DATA when unset
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class GameConfig:
    """Game shape plus the sender-side hardening augmentations."""

    size: int = 128  # candidates per game: 1 target + (size - 1) distractors
    sender_noise: bool = False
    noise_mean: float = 0.0
    noise_variance: float = 0.1
    sender_rotation: bool = False


@dataclass
class EncoderConfig:
    regime: str = "random_frozen"
    small: bool = False  # 32x32-native debug encoder instead of the VGG16 topology
    weights_path: Optional[str] = None
    shared: bool = True  # one encoder instance for both agents


@dataclass
class ChannelConfig:
    vocab_size: int = 100  # includes the EoS token
    max_len: int = 5
    temperature: float = 1.0


@dataclass
class AgentConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    score_dim: int = 128


@dataclass
class DualTaskConfig:
    mode: str = "none"


@dataclass
class LossConfig:
    margin: float = 1.0
    # None -> per-mode default (0.5 sender-predicts, 5.0 receiver-predicts)
    rotation_weight: Optional[float] = None
    # None -> per-mode default (alternating only for receiver-predicts)
    alternate: Optional[bool] = None


@dataclass
class TrainConfig:
    epochs: int = 200
    optimizer: str = "adam"
    lr: float = 1.0e-3
    checkpoint_every: int = 10  # epochs between checkpoints
    quick_eval_games: int = 1280  # per-epoch mini evaluation for the curves
    max_steps_per_epoch: Optional[int] = None  # debug-scale cap, None = full epoch


@dataclass
class ExperimentConfig:
    """Complete declarative description of one experiment."""

    seed: int = 0
    output_dir: str = "runs/exp"
    eval_games: int = 10000
    device: str = "cpu"
    data: DataConfig = field(default_factory=DataConfig)
    game: GameConfig = field(default_factory=GameConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    dual_task: DualTaskConfig = field(default_factory=DualTaskConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    # ------------------------------------------------------------------
    # resolution helpers
    # ------------------------------------------------------------------

    def resolved_data_path(self) -> str:
        path = self.data.path or os.environ.get(ENV_DATA_PATH)
        if not path:
            raise ConfigError(
                "no dataset path: set data.path in the config or the "
                f"{ENV_DATA_PATH} environment variable"
            )
        return path

    def rotation_weight(self) -> float:
        if self.loss.rotation_weight is not None:
            return self.loss.rotation_weight
        return ROTATION_WEIGHT_DEFAULTS.get(self.dual_task.mode, 0.0)

    def alternate(self) -> bool:
        if self.loss.alternate is not None:
            return self.loss.alternate
        return ALTERNATE_DEFAULTS.get(self.dual_task.mode, False)

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        aug = self.data.augment
        for name in ("p_bri", "p_con", "p_sat", "p_hue", "p_grayscale", "p_hflip"):
            value = getattr(aug, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"data.augment.{name} must be in [0, 1], got {value}")
        if self.game.size < 2:
            raise ConfigError(f"game.size must be >= 2, got {self.game.size}")
        if self.game.noise_variance < 0:
            raise ConfigError("game.noise_variance must be >= 0")
        if self.encoder.regime not in REGIMES:
            raise ConfigError(
                f"encoder.regime must be one of {REGIMES}, got {self.encoder.regime!r}"
            )
        if self.channel.vocab_size < 2:
            raise ConfigError("channel.vocab_size must be >= 2")
        if self.channel.max_len < 1:
            raise ConfigError("channel.max_len must be >= 1")
        if self.channel.temperature <= 0:
            raise ConfigError("channel.temperature must be > 0")
        if self.dual_task.mode not in DUAL_TASK_MODES:
            raise ConfigError(
                f"dual_task.mode must be one of {DUAL_TASK_MODES}, "
                f"got {self.dual_task.mode!r}"
            )
        if self.dual_task.mode != "none" and not self.game.sender_rotation:
            raise ConfigError(
                "dual_task requires game.sender_rotation=true: the rotation "
                "label is only defined when the sender's view is rotated"
            )
        if self.loss.margin < 0:
            raise ConfigError("loss.margin must be >= 0")
        if self.train.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.train.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if self.train.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.train.optimizer!r}")
        if self.eval_games < 1:
            raise ConfigError("eval_games must be >= 1")
        return self

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _from_dict(cls, raw, path="")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        raw = yaml.safe_load(text)
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a mapping at the top level")
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_yaml(path.read_text())

    def config_hash(self) -> str:
        """Short content hash of the config (independent of key order)."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def provenance_flags(self) -> dict:
        """Convention flags embedded in every results file."""
        return {
            "length_includes_eos": True,
            "hinge_margin": self.loss.margin,
            "channel_temperature": self.channel.temperature,
            "ranks_zero_based": True,
            "eval_split": "test",
        }


def _from_dict(cls: type, raw: Any, path: str) -> Any:
    """Build a (possibly nested) dataclass from a plain dict, strictly."""
    if not dataclasses.is_dataclass(cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"expected a mapping for {path or 'config'}, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        where = path or "config"
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        ftype = fields[name].type
        sub = _DATACLASS_FIELDS.get((cls, name))
        if sub is not None:
            kwargs[name] = _from_dict(sub, value, path=f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


# Static map of nested dataclass fields (avoids string-annotation lookups).
_DATACLASS_FIELDS = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "game"): GameConfig,
    (ExperimentConfig, "encoder"): EncoderConfig,
    (ExperimentConfig, "channel"): ChannelConfig,
    (ExperimentConfig, "agent"): AgentConfig,
    (ExperimentConfig, "dual_task"): DualTaskConfig,
    (ExperimentConfig, "loss"): LossConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (DataConfig, "augment"): AugmentConfig,
}
