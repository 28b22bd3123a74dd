import math

import pytest
import torch

from refgame.errors import ConfigError, DomainError
from refgame.losses import (
    LossBundle,
    clamp_count,
    combine_losses,
    hinge_game_loss,
    reset_clamp_count,
    rotation_loss,
)


def brute_hinge(scores, target, margin=1.0):
    return sum(
        max(0.0, margin - scores[target] + s)
        for k, s in enumerate(scores)
        if k != target
    )


def test_hinge_margin_satisfied_everywhere():
    loss = hinge_game_loss(torch.tensor([1.0, 2.0, 5.0]), 2)
    assert float(loss) == 0.0


def test_hinge_tie_pays_full_margin():
    loss = hinge_game_loss(torch.tensor([0.0, 0.0]), 0)
    assert float(loss) == pytest.approx(1.0)


def test_hinge_hand_computed_example():
    loss = hinge_game_loss(torch.tensor([0.5, 1.0, -0.2]), 0)
    assert float(loss) == pytest.approx(1.5 + 0.3)


def test_hinge_matches_brute_force_batched():
    gen = torch.Generator().manual_seed(0)
    scores = torch.randn(50, 9, generator=gen, dtype=torch.float64)
    targets = torch.randint(0, 9, (50,), generator=gen)
    got = hinge_game_loss(scores, targets)
    for b in range(50):
        expected = brute_hinge(scores[b].tolist(), int(targets[b]))
        assert float(got[b]) == pytest.approx(expected, abs=1e-12)


def test_hinge_shift_invariance():
    gen = torch.Generator().manual_seed(1)
    scores = torch.randn(20, 6, generator=gen)
    targets = torch.randint(0, 6, (20,), generator=gen)
    shifted = hinge_game_loss(scores + 3.7, targets)
    assert torch.allclose(hinge_game_loss(scores, targets), shifted, atol=1e-5)


def test_hinge_zero_iff_margin_met():
    # zero exactly when the target beats every distractor by the margin
    scores = torch.tensor([2.0, 1.0, 0.99])
    assert float(hinge_game_loss(scores, 0)) == 0.0
    scores = torch.tensor([2.0, 1.01, 0.0])
    assert float(hinge_game_loss(scores, 0)) > 0.0


def test_hinge_gradient_matches_finite_differences():
    scores = torch.tensor([0.3, 1.4, -0.9, 0.8], dtype=torch.float64,
                          requires_grad=True)
    loss = hinge_game_loss(scores, 0)
    loss.backward()
    eps = 1e-6
    for i in range(4):
        probe = scores.detach().clone()
        probe[i] += eps
        up = float(hinge_game_loss(probe, 0))
        probe[i] -= 2 * eps
        down = float(hinge_game_loss(probe, 0))
        fd = (up - down) / (2 * eps)
        assert float(scores.grad[i]) == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_hinge_rejects_bad_targets():
    with pytest.raises(DomainError):
        hinge_game_loss(torch.tensor([1.0, 2.0]), 2)
    with pytest.raises(DomainError):
        hinge_game_loss(torch.randn(2, 3, 4), torch.tensor([0, 1]))


def test_rotation_loss_analytic_values():
    perfect = rotation_loss(torch.tensor([0.0, 1.0, 0.0, 0.0]), 1)
    assert float(perfect) == pytest.approx(0.0, abs=1e-9)
    uniform = rotation_loss(torch.full((4,), 0.25), 2)
    assert float(uniform) == pytest.approx(math.log(4), abs=1e-6)
    skewed = rotation_loss(torch.tensor([0.7, 0.1, 0.1, 0.1]), 0)
    assert float(skewed) == pytest.approx(-math.log(0.7), abs=1e-6)


def test_rotation_loss_clamps_and_counts_zeros():
    reset_clamp_count()
    loss = rotation_loss(torch.tensor([0.0, 1.0, 0.0, 0.0]), 0)
    assert math.isfinite(float(loss))
    assert float(loss) == pytest.approx(-math.log(1e-12), rel=1e-6)
    assert clamp_count() == 1
    reset_clamp_count()
    assert clamp_count() == 0


def test_rotation_loss_rejects_bad_labels():
    with pytest.raises(DomainError):
        rotation_loss(torch.full((4,), 0.25), 4)


def test_combine_none_passes_game_through():
    game = torch.tensor(2.0)
    bundle = combine_losses(game, None, mode="none", step_index=3)
    assert isinstance(bundle, LossBundle)
    assert bundle.combined is game
    assert bundle.rotation_loss is None
    assert bundle.schedule_phase == "game_only"


def test_combine_none_rejects_rotation():
    with pytest.raises(ConfigError):
        combine_losses(torch.tensor(1.0), torch.tensor(1.0), mode="none", step_index=0)


def test_combine_requires_rotation_for_dual_modes():
    with pytest.raises(ConfigError):
        combine_losses(torch.tensor(1.0), None, mode="sender_predicts", step_index=0)
    with pytest.raises(ConfigError):
        combine_losses(torch.tensor(1.0), None, mode="bogus", step_index=0)


def test_combine_sender_predicts_weighted_sum():
    game, rot = torch.tensor(2.0), torch.tensor(0.4)
    for step in range(4):
        bundle = combine_losses(game, rot, mode="sender_predicts", step_index=step)
        assert float(bundle.combined) == pytest.approx(2.2)
        assert bundle.schedule_phase == "weighted_sum"


def test_combine_receiver_predicts_alternates():
    game, rot = torch.tensor(2.0), torch.tensor(0.4)
    even = combine_losses(game, rot, mode="receiver_predicts", step_index=0)
    odd = combine_losses(game, rot, mode="receiver_predicts", step_index=1)
    assert float(even.combined) == pytest.approx(2.0)  # 5.0 * 0.4
    assert even.schedule_phase == "rotation_only"
    assert float(odd.combined) == pytest.approx(4.0)  # 5.0 * 0.4 + 2.0
    assert odd.schedule_phase == "rotation_plus_game"


def test_combine_alternation_has_period_two():
    game, rot = torch.tensor(1.0), torch.tensor(1.0)
    phases = [
        combine_losses(game, rot, mode="receiver_predicts", step_index=s).schedule_phase
        for s in range(8)
    ]
    assert phases == ["rotation_only", "rotation_plus_game"] * 4


def test_combine_custom_weight_and_alternation_override():
    game, rot = torch.tensor(1.0), torch.tensor(2.0)
    bundle = combine_losses(
        game, rot, mode="receiver_predicts", step_index=0,
        rotation_weight=1.5, alternate=False,
    )
    assert float(bundle.combined) == pytest.approx(1.5 * 2.0 + 1.0)
    assert bundle.schedule_phase == "weighted_sum"
