"""Game and auxiliary objectives.

The game is trained with a sum-over-distractors hinge loss (margin 1).
Dual-task runs add a rotation cross-entropy, combined either as a fixed
weighted sum (sender-predicts) or by alternating between rotation-only and
rotation-plus-game objectives on successive optimizer steps
(receiver-predicts).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import Tensor

from refgame.errors import ConfigError, DomainError

ROTATION_PROB_EPS = 1e-12

# Number of times rotation_loss had to clamp a zero probability; purely
# diagnostic, reset via reset_clamp_count().
_clamp_count = 0


def clamp_count() -> int:
    return _clamp_count


def reset_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


def hinge_game_loss(
    scores: Tensor,
    target_index: Union[int, Tensor],
    margin: float = 1.0,
) -> Tensor:
    """Sum over distractors of max(0, margin - s_target + s_k).

    ``scores`` is [C] with an int target, or [B, C] with targets [B];
    returns a scalar or a [B] vector accordingly.
    """
    squeeze = scores.dim() == 1
    if squeeze:
        scores = scores.unsqueeze(0)
    if scores.dim() != 2:
        raise DomainError(f"scores must be [C] or [B, C], got {tuple(scores.shape)}")
    batch, candidates = scores.shape
    targets = torch.as_tensor(target_index, device=scores.device, dtype=torch.long)
    if squeeze and targets.dim() == 0:
        targets = targets.unsqueeze(0)
    if targets.shape != (batch,):
        raise DomainError(f"targets must have shape [{batch}], got {tuple(targets.shape)}")
    if bool((targets < 0).any()) or bool((targets >= candidates).any()):
        raise DomainError(
            f"target index out of range for {candidates} candidates"
        )
    target_scores = scores.gather(1, targets.unsqueeze(1))  # [B, 1]
    violations = torch.relu(margin - target_scores + scores)  # [B, C]
    # the k == target term contributes exactly relu(margin) = margin
    loss = violations.sum(dim=1) - margin
    return loss.squeeze(0) if squeeze else loss


def rotation_loss(
    probabilities: Tensor,
    label: Union[int, Tensor],
    eps: float = ROTATION_PROB_EPS,
) -> Tensor:
    """Cross entropy -log p[label] on an explicit probability vector.

    ``probabilities`` is [K] or [B, K]; zero probabilities are clamped at
    ``eps`` (counted, see :func:`clamp_count`).
    """
    global _clamp_count
    squeeze = probabilities.dim() == 1
    if squeeze:
        probabilities = probabilities.unsqueeze(0)
    if probabilities.dim() != 2:
        raise DomainError(
            f"probabilities must be [K] or [B, K], got {tuple(probabilities.shape)}"
        )
    batch, classes = probabilities.shape
    labels = torch.as_tensor(label, device=probabilities.device, dtype=torch.long)
    if squeeze and labels.dim() == 0:
        labels = labels.unsqueeze(0)
    if labels.shape != (batch,):
        raise DomainError(f"labels must have shape [{batch}], got {tuple(labels.shape)}")
    if bool((labels < 0).any()) or bool((labels >= classes).any()):
        raise DomainError(f"label out of range for {classes} classes")
    picked = probabilities.gather(1, labels.unsqueeze(1)).squeeze(1)
    n_clamped = int((picked.detach() < eps).sum())
    if n_clamped:
        _clamp_count += n_clamped
    loss = -torch.log(picked.clamp_min(eps))
    return loss.squeeze(0) if squeeze else loss


@dataclass
class LossBundle:
    game_loss: Tensor
    rotation_loss: Optional[Tensor]
    combined: Tensor
    schedule_phase: str


def combine_losses(
    game_loss: Tensor,
    rotation: Optional[Tensor],
    mode: str,
    step_index: int,
    rotation_weight: Optional[float] = None,
    alternate: Optional[bool] = None,
) -> LossBundle:
    """Combine game and rotation losses per the dual-task recipe.

    none:              combined = game_loss (no rotation loss permitted).
    sender_predicts:   combined = w * rotation + game_loss every step (w=0.5).
    receiver_predicts: alternates by optimizer step between w * rotation
                       (even steps) and w * rotation + game_loss (odd steps),
                       w=5.0. ``alternate=False`` forces the summed form.
    """
    if mode == "none":
        if rotation is not None:
            raise ConfigError("rotation loss provided but dual_task mode is 'none'")
        return LossBundle(
            game_loss=game_loss,
            rotation_loss=None,
            combined=game_loss,
            schedule_phase="game_only",
        )
    if mode not in ("sender_predicts", "receiver_predicts"):
        raise ConfigError(f"unknown dual-task mode {mode!r}")
    if rotation is None:
        raise ConfigError(f"dual_task mode {mode!r} requires a rotation loss")

    if rotation_weight is None:
        rotation_weight = 0.5 if mode == "sender_predicts" else 5.0
    if alternate is None:
        alternate = mode == "receiver_predicts"

    if alternate and step_index % 2 == 0:
        combined = rotation_weight * rotation
        phase = "rotation_only"
    else:
        combined = rotation_weight * rotation + game_loss
        phase = "rotation_plus_game" if alternate else "weighted_sum"
    return LossBundle(
        game_loss=game_loss,
        rotation_loss=rotation,
        combined=combined,
        schedule_phase=phase,
    )
