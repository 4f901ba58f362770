"""Numerically stable softmax attention for a fixed query over a finite context.

Scores are stabilized by subtracting the best (smallest) distance-to-query
before exponentiation, so inverse temperatures up to 1e9 stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import Context
from .errors import DegenerateProjection, DimensionMismatch
from .limits import alpha_exponent, ln_gamma
from .sphere import d2q_batch, normalize

_WEIGHT_FLUSH = 1e-300


@dataclass(frozen=True)
class AttentionSnapshot:
    """Weights, their ordering, and (optionally) the output of one context.

    ``order`` sorts weights descending (ties broken by lower token index);
    ``log_partition_shifted`` is log sum_i exp(-beta (T_i - T_(1))).
    """

    weights: np.ndarray
    order: np.ndarray
    log_partition_shifted: float
    d2q_values: np.ndarray
    beta: float
    output: np.ndarray | None = None
    displacement: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def min_d2q(self) -> float:
        """The best score T_(1)."""
        return float(self.d2q_values[self.order[0]])

    def ordered_weights(self, k=None) -> np.ndarray:
        """The k largest weights, descending (all of them when k is None)."""
        idx = self.order if k is None else self.order[:k]
        return self.weights[idx]


def _tokens_of(context) -> np.ndarray:
    if isinstance(context, Context):
        return context.tokens
    return np.asarray(context, dtype=float)


def snapshot_from_scores(scores: np.ndarray, beta: float) -> AttentionSnapshot:
    """Shared softmax pipeline over precomputed distance-to-query scores."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise DimensionMismatch("context must be nonempty")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    t_min = float(scores.min())
    shifted = np.exp(-beta * (scores - t_min))
    total = float(shifted.sum())
    weights = shifted / total
    weights[weights < _WEIGHT_FLUSH] = 0.0
    order = np.argsort(scores, kind="stable")
    return AttentionSnapshot(
        weights=weights,
        order=order,
        log_partition_shifted=math.log(total),
        d2q_values=scores,
        beta=float(beta),
    )


def attention_weights(q, context, beta: float) -> AttentionSnapshot:
    """Softmax weights A_i = e^{-beta T_i} / sum_j e^{-beta T_j} over the context."""
    tokens = _tokens_of(context)
    q = np.asarray(q, dtype=float)
    return snapshot_from_scores(d2q_batch(q, tokens), beta)


def attention_output(q, context, beta: float, value_matrix) -> AttentionSnapshot:
    """Full snapshot including output = V sum_i A_i x_i and displacement = output - Vq."""
    tokens = _tokens_of(context)
    q = np.asarray(q, dtype=float)
    V = np.asarray(value_matrix, dtype=float)
    if V.shape != (q.size, q.size):
        raise DimensionMismatch(f"value matrix shape {V.shape} does not match d={q.size}")
    if not np.all(np.isfinite(V)):
        raise ValueError("value matrix must be finite")
    snap = snapshot_from_scores(d2q_batch(q, tokens), beta)
    mean_token = snap.weights @ tokens
    output = V @ mean_token
    displacement = output - V @ q
    return AttentionSnapshot(
        weights=snap.weights,
        order=snap.order,
        log_partition_shifted=snap.log_partition_shifted,
        d2q_values=snap.d2q_values,
        beta=snap.beta,
        output=output,
        displacement=displacement,
    )


def reduce_postln(Q, K, x, beta: float):
    """Fold general query/key matrices into an effective unit query and temperature.

    Softmax over beta <Qx, K x_j> equals softmax over beta_eff <q, x_j> with
    q = K^T Q x / ||K^T Q x|| and beta_eff = beta ||K^T Q x||.
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    x = np.asarray(x, dtype=float)
    s = K.T @ (Q @ x)
    norm = float(np.linalg.norm(s))
    if not norm > 1e-300:
        raise DegenerateProjection("K^T Q x vanished")
    return normalize(s), beta * norm


def normalized_partition(q, context, beta: float, Cq: float) -> float:
    """Partition function scaled by its subcritical asymptote
    Cq * n * beta^{-1/alpha} * Gamma(1/alpha + 1); tends to 1 for
    diverging beta below the critical scale."""
    if beta <= 0 or Cq <= 0:
        raise ValueError("need beta > 0 and Cq > 0")
    tokens = _tokens_of(context)
    q = np.asarray(q, dtype=float)
    snap = attention_weights(q, tokens, beta)
    alpha = alpha_exponent(q.size)
    log_z = snap.log_partition_shifted - beta * snap.min_d2q
    log_ref = (math.log(Cq) + math.log(snap.n) - math.log(beta) / alpha
               + ln_gamma(1.0 / alpha + 1.0))
    return math.exp(log_z - log_ref)
