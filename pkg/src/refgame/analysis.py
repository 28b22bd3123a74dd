"""Offline message analysis.

High communication rate alone cannot distinguish a protocol that conveys
visual semantics from one that merely hashes individual images. The
token-unigram / target-class mutual information gives a cheap separation:
hash-like codes spread tokens evenly over classes (MI near the shuffled
null), semantic codes concentrate them.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from refgame.errors import DomainError
from refgame.metrics import N_CLASSES, TOP_K, GameOutcome, comm_rate

# a run counts as hash-like when it communicates well yet its token/class
# MI is indistinguishable from the label-shuffled null
HASH_COMM_THRESHOLD = 0.8
HASH_MI_FLOOR = 0.02  # nats


def token_class_table(
    outcomes: Sequence[GameOutcome],
    vocab_size: int,
    n_classes: int = N_CLASSES,
) -> np.ndarray:
    """Contingency counts [vocab_size, n_classes] over effective tokens."""
    if not outcomes:
        raise DomainError("at least one outcome is required")
    table = np.zeros((vocab_size, n_classes), dtype=np.int64)
    for o in outcomes:
        if o.message_tokens is None:
            raise DomainError("outcomes carry no message tokens")
        for t in o.message_tokens:
            table[int(t), o.target_class] += 1
    return table


def mutual_information(table: np.ndarray) -> float:
    """Maximum-likelihood MI (nats) of a joint count table."""
    table = np.asarray(table, dtype=np.float64)
    total = table.sum()
    if total <= 0:
        raise DomainError("contingency table is empty")
    p = table / total
    pv = p.sum(axis=1, keepdims=True)
    pc = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / (pv @ pc)[mask])).sum())


def shuffled_mi(
    outcomes: Sequence[GameOutcome],
    vocab_size: int,
    n_shuffles: int,
    rng: np.random.Generator,
    n_classes: int = N_CLASSES,
) -> np.ndarray:
    """Null MI distribution from permuting target classes across games."""
    token_lists = [np.asarray(o.message_tokens, dtype=np.int64) for o in outcomes]
    classes = np.array([o.target_class for o in outcomes], dtype=np.int64)
    values = []
    for _ in range(n_shuffles):
        perm = rng.permutation(classes)
        table = np.zeros((vocab_size, n_classes), dtype=np.int64)
        for tokens, c in zip(token_lists, perm):
            np.add.at(table, (tokens, c), 1)
        values.append(mutual_information(table))
    return np.array(values)


def analyze_messages(
    outcomes: Sequence[GameOutcome],
    vocab_size: int,
    rng: Optional[np.random.Generator] = None,
    n_shuffles: int = 20,
) -> dict:
    """MI summary plus the hash-likeness verdict for one evaluation."""
    if rng is None:
        rng = np.random.default_rng(0)
    table = token_class_table(outcomes, vocab_size)
    mi = mutual_information(table)
    null = shuffled_mi(outcomes, vocab_size, n_shuffles, rng)
    rate, _ = comm_rate(outcomes)
    threshold = max(2.0 * float(null.mean()), HASH_MI_FLOOR)
    unique = {tuple(int(t) for t in o.message_tokens) for o in outcomes}
    return {
        "games": len(outcomes),
        "comm_rate": rate,
        "token_class_mi": mi,
        "null_mi_mean": float(null.mean()),
        "null_mi_max": float(null.max()),
        "mi_threshold": threshold,
        "hash_like": bool(rate >= HASH_COMM_THRESHOLD and mi <= threshold),
        "unique_messages": len(unique),
    }


def message_records(outcomes: Sequence[GameOutcome]) -> list[dict]:
    """Per-game inspection records: tokens, classes, and target placement."""
    records = []
    for o in outcomes:
        if o.message_tokens is None:
            raise DomainError("outcomes carry no message tokens")
        records.append(
            {
                "tokens": [int(t) for t in o.message_tokens],
                "target_class": int(o.target_class),
                "target_rank": int(np.nonzero(o.ranking == o.target_index)[0][0]),
                "top5_classes": [int(c) for c in o.candidate_classes[o.ranking[:TOP_K]]],
            }
        )
    return records
