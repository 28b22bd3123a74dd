"""Training orchestration: model assembly, the optimization loop,
checkpointing, and the evaluation protocol.

All randomness is derived from the experiment seed through fixed offsets,
so a run is reproducible end to end and an interrupted run resumed from a
checkpoint at an epoch boundary replays the exact same batches.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

from refgame import losses, metrics
from refgame.agents import Receiver, RotationHead, Sender
from refgame.channel import ChannelParams, DiscreteChannel, Vocabulary
from refgame.config import ExperimentConfig
from refgame.data import Cifar10Data, GameBatch, eval_batches, train_epoch_batches
from refgame.encoders import build_encoder, parameter_checksum
from refgame.errors import CheckpointError, ConfigError, ShapeError, TrainingError

CHECKPOINT_VERSION = 1

# seed offsets separating the independent random streams of a run
_CHANNEL_SEED_OFFSET = 104_729
_EVAL_SEED_OFFSET = 7_919


class GameModel(nn.Module):
    """Both agents, their encoder(s), the channel, and the optional
    rotation head, bundled for checkpointing."""

    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config
        vocab = Vocabulary(size=config.channel.vocab_size)
        self.channel = DiscreteChannel(
            vocab=vocab,
            params=ChannelParams(temperature=config.channel.temperature),
            max_len=config.channel.max_len,
        )
        self.sender_encoder = build_encoder(config.encoder, config.seed)
        if config.encoder.shared:
            self.receiver_encoder = self.sender_encoder
        else:
            self.receiver_encoder = build_encoder(config.encoder, config.seed + 1)
        feat_dim = self.sender_encoder.feature_dim
        a = config.agent
        self.sender = Sender(feat_dim, vocab, a.embed_dim, a.hidden_dim)
        self.receiver = Receiver(feat_dim, vocab, a.embed_dim, a.hidden_dim, a.score_dim)
        self.rotation_head: Optional[RotationHead] = None
        if config.dual_task.mode != "none":
            self.rotation_head = RotationHead(a.hidden_dim)


def build_model(config: ExperimentConfig) -> GameModel:
    """Seed-deterministic model construction, leaving global RNG untouched."""
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        return GameModel(config)


@dataclass
class GamePlay:
    """One forward pass over a game batch."""

    scores: torch.Tensor  # [G, G]
    message: "object"
    rotation_probs: Optional[torch.Tensor] = None


def play_batch(
    model: GameModel,
    batch: GameBatch,
    rng: Optional[torch.Generator] = None,
    greedy: bool = False,
) -> GamePlay:
    """Run sender and receiver over one batch of games.

    Game g's target is candidate g, so the score matrix is [G, G] with the
    diagonal holding target scores.
    """
    expected = model.config.game.size
    if batch.game_size != expected:
        raise ShapeError(f"batch has {batch.game_size} candidates, config says {expected}")
    sender_feats = model.sender_encoder(batch.sender_images)
    message, sender_tap = model.sender(sender_feats, model.channel, rng, greedy=greedy)
    candidate_feats = model.receiver_encoder(batch.candidate_images)
    scores, receiver_tap = model.receiver(message, candidate_feats)

    rotation_probs = None
    if model.rotation_head is not None and batch.rotation_labels is not None:
        mode = model.config.dual_task.mode
        tap = sender_tap if mode == "sender_predicts" else receiver_tap
        rotation_probs = model.rotation_head(tap)
    return GamePlay(scores=scores, message=message, rotation_probs=rotation_probs)


def make_optimizer(model: GameModel, config: ExperimentConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ConfigError("model has no trainable parameters")
    if config.train.optimizer != "adam":
        raise ConfigError(f"unknown optimizer {config.train.optimizer!r}")
    return torch.optim.Adam(params, lr=config.train.lr)


class Trainer:
    """Owns a model, its optimizer, and the run directory."""

    def __init__(
        self,
        config: ExperimentConfig,
        data: Cifar10Data,
        model: Optional[GameModel] = None,
    ):
        config.validate()
        self.config = config
        self.data = data
        self.model = model if model is not None else build_model(config)
        self.optimizer = make_optimizer(self.model, config)
        self.epoch = 0  # completed epochs
        self.global_step = 0  # optimizer steps since step 0
        self.out_dir = Path(config.output_dir)
        self._pending_rng_state: Optional[torch.Tensor] = None

    # ---------------------------------------------------------------- train

    def train(self) -> list[dict]:
        """Run the configured number of epochs; returns the epoch records."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config.save(self.out_dir / "config.yaml")
        metrics_path = self.out_dir / "metrics.jsonl"
        if self.global_step == 0:
            torch.manual_seed(self.config.seed)
            metrics_path.write_text(json.dumps(self._header()) + "\n")
        elif self._pending_rng_state is not None:
            torch.set_rng_state(self._pending_rng_state)
            self._pending_rng_state = None

        frozen_before = None
        if self.config.encoder.regime != "learned_end_to_end":
            frozen_before = parameter_checksum(self.model.sender_encoder)

        records = []
        for epoch in range(self.epoch, self.config.train.epochs):
            losses.reset_clamp_count()
            epoch_stats = self._train_epoch(epoch)
            self.epoch = epoch + 1
            quick = self.evaluate(eval_games=self.config.train.quick_eval_games)
            record = {
                "epoch": self.epoch,
                "step": self.global_step,
                **epoch_stats,
                "comm_rate": quick.comm_rate,
                "top5_comm_rate": quick.top5_comm_rate,
                "mean_msg_len": quick.mean_msg_len,
            }
            if quick.rotation_accuracy is not None:
                record["rotation_accuracy"] = quick.rotation_accuracy
            if losses.clamp_count():
                record["rotation_prob_clamps"] = losses.clamp_count()
            records.append(record)
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
            if self.epoch % self.config.train.checkpoint_every == 0:
                self.save_checkpoint(self.out_dir / f"ckpt-epoch{self.epoch:04d}.pt")

        if frozen_before is not None:
            frozen_after = parameter_checksum(self.model.sender_encoder)
            if frozen_after != frozen_before:
                raise TrainingError("frozen encoder parameters drifted during training")
        self.save_checkpoint(self.out_dir / "ckpt-final.pt")
        return records

    def _header(self) -> dict:
        return {
            "type": "header",
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "flags": self.config.provenance_flags(),
        }

    def _train_epoch(self, epoch: int) -> dict:
        self.model.train()
        channel_rng = torch.Generator().manual_seed(
            self.config.seed + _CHANNEL_SEED_OFFSET + epoch
        )
        sums = {"game_loss": 0.0, "rotation_loss": 0.0, "combined_loss": 0.0}
        rot_steps = 0
        steps = 0
        for batch in train_epoch_batches(self.data, self.config, epoch):
            bundle = self._train_step(batch, channel_rng)
            sums["game_loss"] += float(bundle.game_loss.detach())
            sums["combined_loss"] += float(bundle.combined.detach())
            if bundle.rotation_loss is not None:
                sums["rotation_loss"] += float(bundle.rotation_loss.detach())
                rot_steps += 1
            steps += 1
        if steps == 0:
            raise TrainingError("epoch produced no batches")
        out = {
            "game_loss": sums["game_loss"] / steps,
            "combined_loss": sums["combined_loss"] / steps,
        }
        if rot_steps:
            out["rotation_loss"] = sums["rotation_loss"] / rot_steps
        return out

    def _train_step(self, batch: GameBatch, rng: torch.Generator) -> losses.LossBundle:
        self.optimizer.zero_grad()
        play = play_batch(self.model, batch, rng)
        game = losses.hinge_game_loss(
            play.scores, batch.target_indices, margin=self.config.loss.margin
        ).mean()
        rotation = None
        if play.rotation_probs is not None:
            rotation = losses.rotation_loss(
                play.rotation_probs, batch.rotation_labels
            ).mean()
        bundle = losses.combine_losses(
            game,
            rotation,
            mode=self.config.dual_task.mode,
            step_index=self.global_step,
            rotation_weight=self.config.loss.rotation_weight,
            alternate=self.config.loss.alternate,
        )
        if not torch.isfinite(bundle.combined):
            path = self.out_dir / "diagnostic-nan.pt"
            self.save_checkpoint(path)
            raise TrainingError(
                f"non-finite loss at step {self.global_step}; state saved to {path}"
            )
        bundle.combined.backward()
        self.optimizer.step()
        self.global_step += 1
        return bundle

    # ----------------------------------------------------------------- eval

    def evaluate(
        self,
        eval_games: Optional[int] = None,
        eval_seed: Optional[int] = None,
        greedy: bool = False,
        collect_outcomes: bool = False,
    ):
        """Play evaluation games on the test split and aggregate metrics.

        Returns the report, or (report, outcomes) with ``collect_outcomes``.
        """
        total = self.config.eval_games if eval_games is None else eval_games
        seed = self.config.seed + _EVAL_SEED_OFFSET if eval_seed is None else eval_seed
        self.model.eval()
        channel_rng = torch.Generator().manual_seed(seed + 1)
        outcomes: list[metrics.GameOutcome] = []
        with torch.no_grad():
            for batch, keep in eval_batches(
                self.data, self.config, eval_games=total, eval_seed=seed
            ):
                play = play_batch(self.model, batch, channel_rng, greedy=greedy)
                scores = play.scores.double().numpy()
                token_ids = play.message.token_ids().numpy()
                lengths = play.message.lengths.numpy()
                classes = batch.classes.numpy()
                rot_ok = None
                if play.rotation_probs is not None:
                    rot_ok = (
                        play.rotation_probs.argmax(dim=1) == batch.rotation_labels
                    ).numpy()
                for g in range(keep):
                    outcomes.append(
                        metrics.make_outcome(
                            scores[g],
                            target_index=g,
                            candidate_classes=classes,
                            rotation_correct=None if rot_ok is None else bool(rot_ok[g]),
                            message_length=int(lengths[g]),
                            message_tokens=token_ids[g, : lengths[g]].copy(),
                        )
                    )
        report = metrics.build_report(
            outcomes,
            meta={
                "config_hash": self.config.config_hash(),
                "seed": self.config.seed,
                "eval_seed": seed,
                "greedy": greedy,
                "epoch": self.epoch,
                **self.config.provenance_flags(),
            },
        )
        return (report, outcomes) if collect_outcomes else report

    # ---------------------------------------------------------- checkpoints

    def save_checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "epoch": self.epoch,
            "global_step": self.global_step,
            "model_state": self.model.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "torch_rng_state": torch.get_rng_state(),
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        os.replace(tmp, path)

    @classmethod
    def load_checkpoint(
        cls,
        path: str | Path,
        data: Cifar10Data,
        config: Optional[ExperimentConfig] = None,
    ) -> "Trainer":
        """Restore a trainer; refuses config mismatches explicitly."""
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        version = payload.get("version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        ckpt_config = ExperimentConfig.from_dict(payload["config"])
        if config is not None and config.config_hash() != payload["config_hash"]:
            raise CheckpointError(
                "config hash mismatch: checkpoint was written with "
                f"{payload['config_hash']}, current config is {config.config_hash()}"
            )
        trainer = cls(ckpt_config, data)
        trainer.model.load_state_dict(payload["model_state"])
        trainer.optimizer.load_state_dict(payload["optimizer_state"])
        trainer.epoch = payload["epoch"]
        trainer.global_step = payload["global_step"]
        trainer._pending_rng_state = payload["torch_rng_state"]
        return trainer
