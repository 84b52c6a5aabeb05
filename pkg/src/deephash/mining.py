"""P x K batch construction and in-batch triplet selection.

Selectors take a squared-distance matrix over the batch and score each
candidate triplet with ``D[a, p] - D[a, n] + alpha``. They differ in which
negative they keep for every ordered anchor/positive pair:

* ``semi_hard``: uniform among negatives with loss in ``(0, alpha)``, falling
  back to any negative with positive loss.
* ``hardest``: the negative with the largest loss (smallest index on ties).
* ``random_negative``: uniform among negatives with positive loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import ConfigError
from .losses import TripletSet


class SelectorKind(str, Enum):
    SEMI_HARD = "semi_hard"
    HARDEST = "hardest"
    RANDOM_NEGATIVE = "random_negative"


@dataclass
class BatchPlan:
    batches: list[np.ndarray]
    P: int
    K_pc: int

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def balanced_batches(labels, P: int, K_pc: int, seed) -> BatchPlan:
    """One epoch of batches with ``P`` classes and ``K_pc`` rows per class.

    The epoch runs ``ceil(n / (C * K_pc))`` rounds. Each round shuffles the
    classes and cuts them into groups of ``P`` (a trailing partial group is
    dropped). Each class hands out rows from its own shuffled queue,
    ``K_pc`` at a time; a queue with fewer than ``K_pc`` rows left is topped
    up by sampling that class's rows with replacement, and an empty queue is
    reshuffled.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if P < 1 or K_pc < 1:
        raise ConfigError(f"P and K_pc must be >= 1, got P={P}, K_pc={K_pc}")
    if P > classes.size:
        raise ConfigError(f"P={P} exceeds the number of classes ({classes.size})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    members = {int(c): np.flatnonzero(labels == c) for c in classes}
    queues = {c: rng.permutation(rows) for c, rows in members.items()}
    n_rounds = max(1, math.ceil(labels.size / (classes.size * K_pc)))

    def take(c):
        q = queues[c]
        if q.size == 0:
            q = rng.permutation(members[c])
        if q.size >= K_pc:
            out, queues[c] = q[:K_pc], q[K_pc:]
            return out
        extra = rng.choice(members[c], size=K_pc - q.size, replace=True)
        queues[c] = q[:0]
        return np.concatenate([q, extra])

    batches = []
    for _ in range(n_rounds):
        order = rng.permutation(classes)
        for g in range(classes.size // P):
            group = order[g * P : (g + 1) * P]
            batches.append(np.concatenate([take(int(c)) for c in group]))
    return BatchPlan(batches, P, K_pc)


def anchor_positive_pairs(labels) -> np.ndarray:
    """All ordered ``(a, p)`` with equal labels and ``a != p``, lexicographic."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return np.argwhere(same)


def enumerate_valid_triplets(labels) -> TripletSet:
    labels = np.asarray(labels)
    out = []
    for a, p in anchor_positive_pairs(labels):
        for n in np.flatnonzero(labels != labels[a]):
            out.append((a, p, n))
    return TripletSet.from_list(out)


def _pair_losses(D, labels, alpha):
    """Loss of every (pair, negative) combination and the negative mask."""
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels)
    pairs = anchor_positive_pairs(labels)
    a, p = pairs[:, 0], pairs[:, 1]
    loss = (D[a, p][:, None] - D[a, :]) + alpha
    neg = labels[None, :] != labels[a][:, None]
    return pairs, loss, neg


def _uniform_pick(cand, rng):
    """Index of a uniformly chosen True entry per row, or -1."""
    keys = rng.random(cand.shape)
    choice = np.argmax(np.where(cand, keys, -1.0), axis=1)
    return np.where(cand.any(axis=1), choice, -1)


def _assemble(pairs, negs) -> TripletSet:
    keep = negs >= 0
    return TripletSet(np.column_stack([pairs[keep], negs[keep]]))


def select_semi_hard(D, labels, alpha: float, rng) -> TripletSet:
    pairs, loss, neg = _pair_losses(D, labels, alpha)
    if pairs.size == 0:
        return TripletSet(np.zeros((0, 3), dtype=np.int64))
    positive = neg & (loss > 0.0)
    primary = _uniform_pick(positive & (loss < alpha), rng)
    fallback = _uniform_pick(positive, rng)
    return _assemble(pairs, np.where(primary >= 0, primary, fallback))


def select_hardest(D, labels, alpha: float) -> TripletSet:
    pairs, loss, neg = _pair_losses(D, labels, alpha)
    if pairs.size == 0:
        return TripletSet(np.zeros((0, 3), dtype=np.int64))
    masked = np.where(neg, loss, -np.inf)
    best = np.argmax(masked, axis=1)
    best_loss = masked[np.arange(best.size), best]
    return _assemble(pairs, np.where(best_loss > 0.0, best, -1))


def select_random_negative(D, labels, alpha: float, rng) -> TripletSet:
    pairs, loss, neg = _pair_losses(D, labels, alpha)
    if pairs.size == 0:
        return TripletSet(np.zeros((0, 3), dtype=np.int64))
    return _assemble(pairs, _uniform_pick(neg & (loss > 0.0), rng))


def select(kind, D, labels, alpha: float, rng) -> TripletSet:
    kind = SelectorKind(kind)
    if kind is SelectorKind.SEMI_HARD:
        return select_semi_hard(D, labels, alpha, rng)
    if kind is SelectorKind.HARDEST:
        return select_hardest(D, labels, alpha)
    return select_random_negative(D, labels, alpha, rng)
