"""Communication and visual-semantics measures, plus idealized baselines.

All measures are rank-based: they depend on scores only through the induced
candidate ordering, with ties broken deterministically by ascending
candidate index. Ranks are 0-based (target ranked first = rank 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from refgame.errors import ConfigError, DomainError

N_CLASSES = 10
TOP_K = 5

BASELINE_MODES = ("hashing", "objectness", "random")


@dataclass
class GameOutcome:
    """Receiver scores and derived ranking for one evaluation game."""

    scores: np.ndarray  # [C]
    ranking: np.ndarray  # [C], candidate indices by descending score
    target_index: int
    target_class: int
    candidate_classes: np.ndarray  # [C]
    rotation_correct: Optional[bool] = None
    message_length: Optional[int] = None
    message_tokens: Optional[np.ndarray] = None  # effective token ids


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Candidate indices by descending score; ties by ascending index."""
    scores = np.asarray(scores)
    return np.argsort(-scores, kind="stable")


def make_outcome(
    scores: np.ndarray,
    target_index: int,
    candidate_classes: np.ndarray,
    rotation_correct: Optional[bool] = None,
    message_length: Optional[int] = None,
    message_tokens: Optional[np.ndarray] = None,
) -> GameOutcome:
    scores = np.asarray(scores, dtype=np.float64)
    candidate_classes = np.asarray(candidate_classes, dtype=np.int64)
    if scores.shape != candidate_classes.shape:
        raise DomainError("scores and candidate_classes must have equal length")
    if not 0 <= target_index < scores.shape[0]:
        raise DomainError(f"target_index {target_index} out of range")
    return GameOutcome(
        scores=scores,
        ranking=rank_candidates(scores),
        target_index=int(target_index),
        target_class=int(candidate_classes[target_index]),
        candidate_classes=candidate_classes,
        rotation_correct=rotation_correct,
        message_length=message_length,
        message_tokens=message_tokens,
    )


def _require_outcomes(outcomes: Sequence[GameOutcome]) -> Sequence[GameOutcome]:
    if len(outcomes) == 0:
        raise DomainError("at least one game outcome is required")
    return outcomes


def comm_rate(outcomes: Sequence[GameOutcome]) -> tuple[float, float]:
    """Top-1 success rate and the population sd of the per-game indicator."""
    _require_outcomes(outcomes)
    hits = np.array([o.ranking[0] == o.target_index for o in outcomes], dtype=np.float64)
    return float(hits.mean()), float(hits.std())


def top5_comm_rate(outcomes: Sequence[GameOutcome]) -> float:
    """Fraction of games with the target among the first 5 ranked candidates."""
    _require_outcomes(outcomes)
    hits = [o.target_index in o.ranking[:TOP_K] for o in outcomes]
    return float(np.mean(hits))


def target_class_top5(outcomes: Sequence[GameOutcome]) -> float:
    """Mean count of target-class candidates in the top 5 (target included)."""
    _require_outcomes(outcomes)
    counts = []
    for o in outcomes:
        if o.candidate_classes is None:
            raise DomainError("candidate classes are required for target_class_top5")
        top = o.ranking[:TOP_K]
        counts.append(int((o.candidate_classes[top] == o.target_class).sum()))
    return float(np.mean(counts))


def target_class_avg_rank(outcomes: Sequence[GameOutcome]) -> float:
    """Mean 0-based rank of all candidates sharing the target's class."""
    _require_outcomes(outcomes)
    means = []
    for o in outcomes:
        if o.candidate_classes is None:
            raise DomainError("candidate classes are required for target_class_avg_rank")
        positions = np.nonzero(o.candidate_classes[o.ranking] == o.target_class)[0]
        means.append(float(positions.mean()))
    return float(np.mean(means))


def rotation_accuracy(outcomes: Sequence[GameOutcome]) -> float:
    """Fraction of games whose rotation prediction matched the label."""
    _require_outcomes(outcomes)
    flags = [o.rotation_correct for o in outcomes]
    if any(f is None for f in flags):
        raise ConfigError(
            "rotation_accuracy called on outcomes without rotation predictions "
            "(not a dual-task run)"
        )
    return float(np.mean([bool(f) for f in flags]))


@dataclass
class EvaluationReport:
    """Aggregate measures over a collection of evaluation games."""

    comm_rate: float
    comm_rate_sd: float
    top5_comm_rate: float
    target_class_top5_mean: float
    target_class_avg_rank: float
    mean_msg_len: Optional[float] = None
    msg_len_sd: Optional[float] = None
    rotation_accuracy: Optional[float] = None
    games: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.comm_rate <= 1.0:
            raise DomainError(f"comm_rate out of [0, 1]: {self.comm_rate}")
        if not 0.0 <= self.top5_comm_rate <= 1.0:
            raise DomainError(f"top5_comm_rate out of [0, 1]: {self.top5_comm_rate}")
        if not 0.0 <= self.target_class_top5_mean <= TOP_K:
            raise DomainError(
                f"target_class_top5_mean out of [0, {TOP_K}]: {self.target_class_top5_mean}"
            )

    def to_dict(self) -> dict:
        return {
            "comm_rate": self.comm_rate,
            "comm_rate_sd": self.comm_rate_sd,
            "top5_comm_rate": self.top5_comm_rate,
            "target_class_top5_mean": self.target_class_top5_mean,
            "target_class_avg_rank": self.target_class_avg_rank,
            "mean_msg_len": self.mean_msg_len,
            "msg_len_sd": self.msg_len_sd,
            "rotation_accuracy": self.rotation_accuracy,
            "games": self.games,
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "EvaluationReport":
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_report(
    outcomes: Sequence[GameOutcome],
    meta: Optional[dict] = None,
) -> EvaluationReport:
    """Compute every applicable measure over ``outcomes``."""
    _require_outcomes(outcomes)
    rate, rate_sd = comm_rate(outcomes)
    lengths = [o.message_length for o in outcomes]
    have_lengths = all(l is not None for l in lengths)
    have_rotation = all(o.rotation_correct is not None for o in outcomes)
    return EvaluationReport(
        comm_rate=rate,
        comm_rate_sd=rate_sd,
        top5_comm_rate=top5_comm_rate(outcomes),
        target_class_top5_mean=target_class_top5(outcomes),
        target_class_avg_rank=target_class_avg_rank(outcomes),
        mean_msg_len=float(np.mean(lengths)) if have_lengths else None,
        msg_len_sd=float(np.std(lengths)) if have_lengths else None,
        rotation_accuracy=rotation_accuracy(outcomes) if have_rotation else None,
        games=len(outcomes),
        meta=dict(meta or {}),
    )


def _sample_candidate_classes(
    histogram: np.ndarray,
    game_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Draw one game's candidate classes and a target position.

    The target class comes from ``histogram``; distractor classes are i.i.d.
    draws. Compositions with fewer than 5 target-class candidates are
    redrawn: the idealized objectness scorer's top-5 count is only defined
    against games that contain at least 5 same-class candidates, and such
    games are vanishingly rare under any CIFAR-like balance (~0.1%).
    """
    n_classes = histogram.shape[0]
    while True:
        target_class = int(rng.choice(n_classes, p=histogram))
        classes = rng.choice(n_classes, size=game_size, p=histogram)
        target_index = int(rng.integers(game_size))
        classes[target_index] = target_class
        if (classes == target_class).sum() >= TOP_K:
            return classes, target_index


def baseline_oracle(
    mode: str,
    class_histogram: Sequence[float],
    games: int,
    rng: np.random.Generator,
    game_size: int = 128,
) -> EvaluationReport:
    """Monte-Carlo simulation of an idealized scorer.

    hashing:    the target is always ranked first, every other candidate in
                uniform random order (messages act as pure image ids).
    objectness: all target-class candidates are ranked first, target at the
                very top, the rest in uniform random order.
    random:     a uniform random ranking (no communication at all).

    Metrics are computed with the real metric implementations over the
    synthesized rankings.
    """
    if mode not in BASELINE_MODES:
        raise DomainError(f"unknown baseline mode {mode!r}, expected one of {BASELINE_MODES}")
    if games < 1:
        raise DomainError("games must be >= 1")
    histogram = np.asarray(class_histogram, dtype=np.float64)
    if histogram.ndim != 1 or histogram.size < 2 or (histogram < 0).any():
        raise DomainError("class_histogram must be a 1-D array of nonnegative weights")
    total = histogram.sum()
    if total <= 0:
        raise DomainError("class_histogram must have positive mass")
    histogram = histogram / total

    outcomes = []
    for _ in range(games):
        classes, target_index = _sample_candidate_classes(histogram, game_size, rng)
        target_class = classes[target_index]
        others = np.setdiff1d(np.arange(game_size), [target_index])
        if mode == "hashing":
            ranking = np.concatenate([[target_index], rng.permutation(others)])
        elif mode == "objectness":
            same = others[classes[others] == target_class]
            rest = others[classes[others] != target_class]
            ranking = np.concatenate(
                [[target_index], rng.permutation(same), rng.permutation(rest)]
            )
        else:  # random
            ranking = rng.permutation(game_size)
        # synthesize strictly decreasing scores so rank_candidates reproduces
        # the intended ranking and the real metric code paths are exercised
        scores = np.empty(game_size, dtype=np.float64)
        scores[ranking] = np.arange(game_size, 0, -1, dtype=np.float64)
        outcomes.append(make_outcome(scores, target_index, classes))

    return build_report(outcomes, meta={"baseline_mode": mode, "game_size": game_size})


def dump_outcomes(outcomes: Iterable[GameOutcome], path: str | Path) -> None:
    """Write per-game outcomes as line-delimited JSON records."""
    with open(path, "w") as fh:
        for o in outcomes:
            record = {
                "target_index": o.target_index,
                "target_class": o.target_class,
                "target_rank": int(np.nonzero(o.ranking == o.target_index)[0][0]),
                "top5": [int(i) for i in o.ranking[:TOP_K]],
                "top5_classes": [int(c) for c in o.candidate_classes[o.ranking[:TOP_K]]],
            }
            if o.message_length is not None:
                record["message_length"] = int(o.message_length)
            if o.message_tokens is not None:
                record["tokens"] = [int(t) for t in o.message_tokens]
            if o.rotation_correct is not None:
                record["rotation_correct"] = bool(o.rotation_correct)
            fh.write(json.dumps(record) + "\n")
