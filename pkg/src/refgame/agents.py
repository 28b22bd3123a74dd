"""Sender, Receiver, and the rotation-prediction head.

The Sender turns visual features into a token sequence; batch norm sits
between its feature projection and the recurrent cell's initial hidden
state. The Receiver decodes the sequence with its own recurrent cell,
batch-normalizes the final hidden state, and scores candidate images by
dot product in a shared comparison space.
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from refgame.channel import DiscreteChannel, Message, Vocabulary, hard_one_hot
from refgame.errors import ShapeError


class Sender(nn.Module):
    """Recurrent token generator seeded with visual information.

    The embedding table has one extra row for the start-of-sequence symbol,
    which is embedded but never transmitted. Each generated one-hot token
    is multiplied back through the embedding table for the next step, so
    gradients flow through the sender's own emissions.
    """

    def __init__(
        self,
        feature_dim: int,
        vocab: Vocabulary,
        embed_dim: int = 64,
        hidden_dim: int = 128,
    ):
        super().__init__()
        self.vocab = vocab
        self.embedding = nn.Embedding(vocab.size + 1, embed_dim)
        self.project = nn.Linear(feature_dim, hidden_dim)
        self.feature_norm = nn.BatchNorm1d(hidden_dim)
        self.cell = nn.LSTMCell(embed_dim, hidden_dim)
        self.head = nn.Linear(hidden_dim, vocab.size)

    def initial_hidden(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 2 or features.shape[1] != self.project.in_features:
            raise ShapeError(
                f"expected features [B, {self.project.in_features}], "
                f"got {tuple(features.shape)}"
            )
        return self.feature_norm(self.project(features))

    def forward(
        self,
        features: torch.Tensor,
        channel: DiscreteChannel,
        rng: Optional[torch.Generator] = None,
        greedy: bool = False,
    ) -> tuple[Message, torch.Tensor]:
        """Generate a message; also return the initial hidden state (the
        128-d batch-normalized visual summary used as the dual-task tap)."""
        batch = features.shape[0]
        h = self.initial_hidden(features)
        h0 = h
        c = torch.zeros_like(h)
        sos = torch.full((batch,), self.vocab.sos_id, dtype=torch.long,
                         device=features.device)
        x = self.embedding(sos)
        token_table = self.embedding.weight[: self.vocab.size]
        steps = []
        for _ in range(channel.max_len):
            h, c = self.cell(x, (h, c))
            logits = self.head(h)
            if greedy:
                one_hot = hard_one_hot(logits)
            else:
                one_hot = channel.sample(logits, rng)
            steps.append(one_hot)
            x = one_hot @ token_table
        raw = torch.stack(steps, dim=1)
        return channel.finalize(raw), h0


class Receiver(nn.Module):
    """Recurrent message decoder that ranks candidate images.

    The final hidden state is taken at each message's effective length, so
    positions after EoS cannot influence the score; the batch-normalized
    final hidden state is also the dual-task tap.
    """

    def __init__(
        self,
        feature_dim: int,
        vocab: Vocabulary,
        embed_dim: int = 64,
        hidden_dim: int = 128,
        score_dim: int = 128,
    ):
        super().__init__()
        self.vocab = vocab
        self.embedding = nn.Embedding(vocab.size, embed_dim)
        self.cell = nn.LSTMCell(embed_dim, hidden_dim)
        self.hidden_norm = nn.BatchNorm1d(hidden_dim)
        self.msg_proj = nn.Linear(hidden_dim, score_dim)
        self.img_proj = nn.Linear(feature_dim, score_dim)

    def decode(self, message: Message) -> torch.Tensor:
        """Batch-normalized final hidden state, [B, hidden_dim]."""
        tokens = message.tokens
        if tokens.dim() != 3 or tokens.shape[2] != self.vocab.size:
            raise ShapeError(
                f"expected message tokens [B, L, {self.vocab.size}], "
                f"got {tuple(tokens.shape)}"
            )
        batch, length, _ = tokens.shape
        x_seq = tokens @ self.embedding.weight
        h = tokens.new_zeros(batch, self.cell.hidden_size)
        c = torch.zeros_like(h)
        hiddens = []
        for t in range(length):
            h, c = self.cell(x_seq[:, t], (h, c))
            hiddens.append(h)
        stacked = torch.stack(hiddens, dim=1)
        last = (message.lengths - 1).clamp(min=0)
        final = stacked[torch.arange(batch, device=tokens.device), last]
        return self.hidden_norm(final)

    def forward(
        self, message: Message, candidate_features: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Scores [B, C] over candidates, plus the decoded message summary."""
        if candidate_features.dim() != 2:
            raise ShapeError(
                f"expected candidate features [C, D], got {tuple(candidate_features.shape)}"
            )
        if candidate_features.shape[1] != self.img_proj.in_features:
            raise ShapeError(
                f"candidate feature dim {candidate_features.shape[1]} != "
                f"{self.img_proj.in_features}"
            )
        summary = self.decode(message)
        msg_vec = self.msg_proj(summary)
        img_vec = self.img_proj(candidate_features)
        scores = msg_vec @ img_vec.t()
        return scores, summary


class RotationHead(nn.Module):
    """Three-layer classifier over the four right-angle rotations.

    Batch norm precedes every activation; the first two activations are
    ReLU and the output activation is a softmax, so the head emits class
    probabilities directly.
    """

    N_ROTATIONS = 4

    def __init__(self, in_dim: int, width: int = 200):
        super().__init__()
        self.in_dim = in_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, width),
            nn.BatchNorm1d(width),
            nn.ReLU(inplace=True),
            nn.Linear(width, width),
            nn.BatchNorm1d(width),
            nn.ReLU(inplace=True),
            nn.Linear(width, self.N_ROTATIONS),
            nn.BatchNorm1d(self.N_ROTATIONS),
        )

    def forward(self, vec: torch.Tensor) -> torch.Tensor:
        if vec.dim() != 2 or vec.shape[1] != self.in_dim:
            raise ShapeError(
                f"expected input [B, {self.in_dim}], got {tuple(vec.shape)}"
            )
        return torch.softmax(self.net(vec), dim=-1)


def sender_generate(
    sender: Sender,
    features: torch.Tensor,
    channel: DiscreteChannel,
    rng: Optional[torch.Generator] = None,
    greedy: bool = False,
) -> Message:
    message, _ = sender(features, channel, rng, greedy=greedy)
    return message


def receiver_score(
    receiver: Receiver, message: Message, candidate_features: torch.Tensor
) -> torch.Tensor:
    scores, _ = receiver(message, candidate_features)
    return scores


def predict_rotation(head: RotationHead, vec: torch.Tensor) -> torch.Tensor:
    return head(vec)
