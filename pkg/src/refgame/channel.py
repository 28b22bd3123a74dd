"""Discrete token channel: Straight-Through Gumbel-Softmax sampling and
variable-length message semantics.

The forward value of a sampled token is always an exact one-hot vector;
the backward pass uses the Jacobian of the temperature-relaxed softmax so
gradients can flow through the sampling step. Messages are fixed-capacity
token matrices whose effective length is derived from the first EoS token;
everything after the first EoS is zero-masked and carries no information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import torch
from torch import Tensor

from refgame.errors import ConfigError, ContractError, DomainError

# Uniform draws are clamped this far away from {0, 1} before the double-log
# transform, keeping the Gumbel noise finite.
GUMBEL_EPS = 1e-10


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory. EoS is an ordinary transmitted token; SoS is only an
    embedding row used to seed generation and is never transmitted."""

    size: int = 100
    eos_id: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ConfigError(f"vocabulary size must be >= 2, got {self.size}")
        if not 0 <= self.eos_id < self.size:
            raise ConfigError(
                f"eos_id must be in [0, {self.size}), got {self.eos_id}"
            )

    @property
    def sos_id(self) -> int:
        return self.size  # extra embedding row past the transmitted tokens


@dataclass
class ChannelParams:
    temperature: float = 1.0
    straight_through: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class Message:
    """A batch of finalized messages.

    tokens: [B, L, V] exact one-hot rows, zero-masked after the first EoS.
    lengths: [B] effective lengths (first-EoS index + 1, or L without EoS).
    """

    tokens: Tensor
    lengths: Tensor

    @property
    def batch_size(self) -> int:
        return self.tokens.shape[0]

    @property
    def max_len(self) -> int:
        return self.tokens.shape[1]

    def token_ids(self) -> Tensor:
        """Integer token ids up to the mask, padded with -1 after EoS."""
        ids = self.tokens.detach().argmax(dim=-1)
        steps = torch.arange(self.max_len, device=ids.device)
        return ids.masked_fill(steps.unsqueeze(0) >= self.lengths.unsqueeze(1), -1)


def sample_gumbel(
    shape: Union[int, Sequence[int], torch.Size],
    rng: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32,
    device: Union[str, torch.device, None] = None,
) -> Tensor:
    """Draw i.i.d. standard Gumbel noise g = -log(-log(u)), u ~ U(0,1)."""
    if isinstance(shape, int):
        shape = (shape,)
    u = torch.rand(tuple(shape), generator=rng, dtype=dtype, device=device)
    u = u.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -torch.log(-torch.log(u))


def gumbel_st_sample(
    logits: Tensor,
    params: ChannelParams,
    rng: Optional[torch.Generator] = None,
) -> Tensor:
    """Sample one token per trailing distribution of ``logits`` ([..., V]).

    Forward value: one_hot(argmax(logits + g)) exactly. Backward: the
    Jacobian of softmax((logits + g) / temperature), substituted
    straight-through. With ``straight_through=False`` the relaxed softmax
    itself is returned (used by gradient probes, never in the game).
    """
    if not torch.isfinite(logits).all():
        raise DomainError("gumbel_st_sample requires finite logits")
    g = sample_gumbel(logits.shape, rng=rng, dtype=logits.dtype, device=logits.device)
    perturbed = logits + g
    y_soft = torch.softmax(perturbed / params.temperature, dim=-1)
    if not params.straight_through:
        return y_soft
    index = perturbed.argmax(dim=-1)
    y_hard = torch.nn.functional.one_hot(index, logits.shape[-1]).to(logits.dtype)
    # forward: exact one-hot (the parenthesized term is elementwise zero);
    # backward: d(y_soft)/d(logits)
    return y_hard + (y_soft - y_soft.detach())


def hard_one_hot(logits: Tensor) -> Tensor:
    """Noise-free argmax one-hot, no gradient path (greedy decoding)."""
    if not torch.isfinite(logits).all():
        raise DomainError("hard_one_hot requires finite logits")
    index = logits.argmax(dim=-1)
    return torch.nn.functional.one_hot(index, logits.shape[-1]).to(logits.dtype)


def finalize_message(raw_tokens: Tensor, vocab: Vocabulary) -> Message:
    """Derive effective lengths from the first EoS and mask later positions.

    Accepts [L, V] (single message, promoted to a batch of one) or [B, L, V].
    Raises ContractError when any row is not an exact one-hot vector.
    """
    if raw_tokens.dim() == 2:
        raw_tokens = raw_tokens.unsqueeze(0)
    if raw_tokens.dim() != 3:
        raise ContractError(
            f"raw tokens must be [L, V] or [B, L, V], got shape {tuple(raw_tokens.shape)}"
        )
    if raw_tokens.shape[-1] != vocab.size:
        raise ContractError(
            f"token rows have width {raw_tokens.shape[-1]}, vocabulary has {vocab.size}"
        )
    values = raw_tokens.detach()
    one_entries = (values == 1.0).sum(dim=-1)
    zero_entries = (values == 0.0).sum(dim=-1)
    if not bool(((one_entries == 1) & (zero_entries == vocab.size - 1)).all()):
        raise ContractError("every token row must be exactly one-hot")

    batch, max_len, _ = raw_tokens.shape
    is_eos = values[..., vocab.eos_id] == 1.0  # [B, L]
    any_eos = is_eos.any(dim=1)
    first_eos = is_eos.to(torch.int64).argmax(dim=1)  # first True, 0 if none
    lengths = torch.where(
        any_eos,
        first_eos + 1,
        torch.full_like(first_eos, max_len),
    )
    steps = torch.arange(max_len, device=raw_tokens.device)
    keep = (steps.unsqueeze(0) < lengths.unsqueeze(1)).to(raw_tokens.dtype)
    return Message(tokens=raw_tokens * keep.unsqueeze(-1), lengths=lengths)


def mean_message_length(messages: Union[Message, Iterable[Message]]) -> float:
    """Arithmetic mean of effective message lengths."""
    if isinstance(messages, Message):
        lengths = messages.lengths
    else:
        parts = [m.lengths for m in messages]
        if not parts:
            raise DomainError("mean_message_length requires at least one message")
        lengths = torch.cat(parts)
    if lengths.numel() == 0:
        raise DomainError("mean_message_length requires at least one message")
    return float(lengths.to(torch.float64).mean())


def message_length_sd(messages: Union[Message, Iterable[Message]]) -> float:
    """Population standard deviation of effective message lengths."""
    if isinstance(messages, Message):
        lengths = messages.lengths
    else:
        parts = [m.lengths for m in messages]
        if not parts:
            raise DomainError("message_length_sd requires at least one message")
        lengths = torch.cat(parts)
    if lengths.numel() == 0:
        raise DomainError("message_length_sd requires at least one message")
    return float(lengths.to(torch.float64).std(unbiased=False))


@dataclass
class DiscreteChannel:
    """Vocabulary, sampling parameters, and message-length cap."""

    vocab: Vocabulary
    params: ChannelParams
    max_len: int = 5

    def __post_init__(self):
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")

    def sample(self, logits: Tensor, rng: Optional[torch.Generator] = None) -> Tensor:
        return gumbel_st_sample(logits, self.params, rng=rng)

    def finalize(self, raw_tokens: Tensor) -> Message:
        return finalize_message(raw_tokens, self.vocab)
