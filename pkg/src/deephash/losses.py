"""Triplet losses on embedding batches, each returning ``(loss, dL/dU)``.

Losses are averaged over triplets (and over rows for the quantization
penalty) unless ``sum_reduction`` is set, in which case the plain sums are
returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hashing import binarize


@dataclass
class TripletSet:
    """``(M, 3)`` array of ``(anchor, positive, negative)`` batch row indices."""

    triples: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64)
        self.triples = t.reshape(-1, 3) if t.size else np.zeros((0, 3), dtype=np.int64)

    @classmethod
    def from_list(cls, triples) -> "TripletSet":
        return cls(np.array(list(triples), dtype=np.int64))

    def __len__(self) -> int:
        return self.triples.shape[0]

    @property
    def m(self) -> int:
        return len(self)

    def as_tuples(self) -> list[tuple[int, int, int]]:
        return [tuple(int(x) for x in row) for row in self.triples]

    def validate(self, labels) -> None:
        labels = np.asarray(labels)
        a, p, n = self.triples.T
        if np.any(a == p) or np.any(a == n):
            raise ValueError("triplet reuses the anchor row")
        if np.any(labels[a] != labels[p]) or np.any(labels[a] == labels[n]):
            raise ValueError("triplet violates label constraints")


def _as_triples(triplets) -> np.ndarray:
    if isinstance(triplets, TripletSet):
        return triplets.triples
    return TripletSet(triplets).triples


def softplus(x):
    """Overflow-safe ``log(1 + exp(x))``."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def pairwise_sq_dists(U) -> np.ndarray:
    """Squared Euclidean distances between all rows of ``U``."""
    U = np.asarray(U, dtype=np.float64)
    if not np.all(np.isfinite(U)):
        raise ValueError("embeddings contain non-finite values")
    sq = np.einsum("ij,ij->i", U, U)
    D = sq[:, None] - 2.0 * (U @ U.T) + sq[None, :]
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    # Symmetrize so D[i, j] and D[j, i] are bit-identical.
    return 0.5 * (D + D.T)


def triplet_margin_values(U, triplets, alpha: float) -> np.ndarray:
    """Per-triplet ``||a-p||^2 - ||a-n||^2 + alpha`` before the hinge."""
    U = np.asarray(U, dtype=np.float64)
    t = _as_triples(triplets)
    a, p, n = U[t[:, 0]], U[t[:, 1]], U[t[:, 2]]
    return np.sum((a - p) ** 2, axis=1) - np.sum((a - n) ** 2, axis=1) + alpha


def triplet_margin_loss(U, triplets, alpha: float, sum_reduction: bool = False):
    U = np.asarray(U, dtype=np.float64)
    t = _as_triples(triplets)
    grad = np.zeros_like(U)
    if len(t) == 0:
        return 0.0, grad
    vals = triplet_margin_values(U, t, alpha)
    active = vals >= 0.0  # the kink takes the active branch
    loss = float(np.sum(np.where(active, vals, 0.0)))
    ta = t[active]
    a, p, n = U[ta[:, 0]], U[ta[:, 1]], U[ta[:, 2]]
    # np.add.at accumulates in index order, keeping results reproducible.
    np.add.at(grad, ta[:, 0], 2.0 * (n - p))
    np.add.at(grad, ta[:, 1], -2.0 * (a - p))
    np.add.at(grad, ta[:, 2], 2.0 * (a - n))
    if not sum_reduction:
        loss /= len(t)
        grad /= len(t)
    return loss, grad


def hash_scores(U, triplets, alpha: float) -> np.ndarray:
    """``s_m = theta(q, p) - theta(q, n) - alpha`` with ``theta(i, j) = u_i . u_j / 2``."""
    U = np.asarray(U, dtype=np.float64)
    t = _as_triples(triplets)
    q, p, n = U[t[:, 0]], U[t[:, 1]], U[t[:, 2]]
    return 0.5 * np.sum(q * p, axis=1) - 0.5 * np.sum(q * n, axis=1) - alpha


def hash_likelihood_loss(U, triplets, alpha: float, sum_reduction: bool = False):
    """Triplet likelihood term of the hashing objective.

    Each triplet contributes ``-(s - log(1 + e^s)) = softplus(-s)``.
    """
    U = np.asarray(U, dtype=np.float64)
    t = _as_triples(triplets)
    grad = np.zeros_like(U)
    if len(t) == 0:
        return 0.0, grad
    s = hash_scores(U, t, alpha)
    loss = float(np.sum(softplus(-s)))
    w = sigmoid(-s)[:, None]
    q, p, n = U[t[:, 0]], U[t[:, 1]], U[t[:, 2]]
    np.add.at(grad, t[:, 0], -0.5 * w * (p - n))
    np.add.at(grad, t[:, 1], -0.5 * w * q)
    np.add.at(grad, t[:, 2], 0.5 * w * q)
    if not sum_reduction:
        loss /= len(t)
        grad /= len(t)
    return loss, grad


def quantization_penalty(U, lam: float, sum_reduction: bool = False):
    """``lam * sum_n ||sgn(u_n) - u_n||^2`` with the sign code held constant."""
    U = np.asarray(U, dtype=np.float64)
    if U.shape[0] == 0 or lam == 0.0:
        return 0.0, np.zeros_like(U)
    diff = binarize(U) - U
    scale = lam if sum_reduction else lam / U.shape[0]
    return float(scale * np.sum(diff * diff)), -2.0 * scale * diff


def quantization_error_per_bit(U) -> float:
    """Mean of ``(sgn(u) - u)^2`` over all entries."""
    U = np.asarray(U, dtype=np.float64)
    if U.size == 0:
        return 0.0
    diff = binarize(U) - U
    return float(np.mean(diff * diff))


def central_difference(f, x, h: float = 1e-6, order: int = 2, pattern_fn=None):
    """Numerical gradient of scalar ``f`` at float64 array ``x``.

    ``order=2`` is the plain central difference, ``order=4`` the five-point
    stencil. If ``pattern_fn`` is given, coordinates whose pattern (e.g. the
    ReLU or hinge activity mask) differs between stencil points are reported
    in the returned ``kinked`` mask. Returns ``(numeric, kinked)``.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    numeric = np.zeros_like(x)
    kinked = np.zeros(x.shape, dtype=bool)
    if order == 2:
        steps, weights, denom = (1, -1), (1.0, -1.0), 2.0 * h
    elif order == 4:
        steps, weights, denom = (-2, -1, 1, 2), (1.0, -8.0, 8.0, -1.0), 12.0 * h
    else:
        raise ValueError(f"order must be 2 or 4, got {order}")
    base = None if pattern_fn is None else np.asarray(pattern_fn(x))
    for i in range(flat.size):
        old = flat[i]
        acc = 0.0
        for s, w in zip(steps, weights):
            flat[i] = old + s * h
            acc += w * f(x)
            if base is not None and not np.array_equal(np.asarray(pattern_fn(x)), base):
                kinked.reshape(-1)[i] = True
        flat[i] = old
        numeric.reshape(-1)[i] = acc / denom
    return numeric, kinked


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic), floor)


def grad_check(loss_fn, U, h: float = 1e-6, mask=None, order: int = 2, pattern_fn=None) -> float:
    """Largest relative error between analytic and finite-difference gradients.

    ``loss_fn(U)`` must return ``(loss, grad)``. Each coordinate's error is
    ``|analytic - numeric| / max(|analytic|, 1e-8)``. Coordinates where
    ``mask`` is False, or whose ``pattern_fn`` output flips inside the
    stencil, are skipped.
    """
    U = np.array(U, dtype=np.float64)
    _, analytic = loss_fn(U)
    numeric, kinked = central_difference(
        lambda V: loss_fn(V)[0], U, h=h, order=order, pattern_fn=pattern_fn
    )
    keep = ~kinked
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    err = np.where(keep, relative_error(analytic, numeric), 0.0)
    return float(err.max()) if err.size else 0.0
