"""Referential signalling games with a discrete token channel.

A Sender describes a target image with a short sequence of discrete tokens;
a Receiver must pick the target out of a batch of candidates. Training is
end-to-end through a Straight-Through Gumbel-Softmax channel, with optional
sender-side augmentation and an auxiliary rotation-prediction task.
"""

__version__ = "0.1.0"

from refgame.config import ExperimentConfig
from refgame.errors import (
    ConfigError,
    ContractError,
    DataError,
    DomainError,
    ShapeError,
)

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "ContractError",
    "DataError",
    "DomainError",
    "ShapeError",
    "__version__",
]
