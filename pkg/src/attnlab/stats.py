"""Statistical machinery for the certification runs.

Empirical CDFs, one- and two-sample Kolmogorov-Smirnov statistics with
asymptotic p-values, vector mean/covariance, and ordered-weight profile
summaries.  All pure; aggregation across trials can be merged associatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySample, GridOutOfRange

_KOLMOGOROV_TERMS = 100


@dataclass(frozen=True)
class Ecdf:
    """Empirical CDF backed by a sorted sample."""

    sorted_samples: np.ndarray
    n: int

    def evaluate(self, x) -> np.ndarray:
        return np.searchsorted(self.sorted_samples, x, side="right") / self.n


def ecdf(samples) -> Ecdf:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise EmptySample("cannot build an ECDF from no samples")
    return Ecdf(sorted_samples=np.sort(samples), n=samples.size)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    n_eff: float
    p_value_asymptotic: float


def kolmogorov_survival(lam: float) -> float:
    """Asymptotic Kolmogorov survival function, series truncated at 100 terms."""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    for k in range(1, _KOLMOGOROV_TERMS + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-300:
            break
    return min(max(2.0 * total, 0.0), 1.0)


def _apply_cdf(cdf, values: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(cdf(values), dtype=float)
        if out.shape == values.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(cdf(v)) for v in values])


def ks_one_sample(samples, cdf) -> KsResult:
    """One-sample KS statistic against a reference CDF, with asymptotic p-value."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        raise EmptySample("KS needs a nonempty sample")
    srt = np.sort(samples)
    f = _apply_cdf(cdf, srt)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    d = float(max(d_plus, d_minus, 0.0))
    return KsResult(statistic=d, n_eff=float(n),
                    p_value_asymptotic=kolmogorov_survival(math.sqrt(n) * d))


def ks_two_sample(a, b) -> KsResult:
    """Two-sample KS statistic: sup |F_a - F_b| over the merged support."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS needs two nonempty samples")
    merged = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, merged, side="right") / a.size
    cdf_b = np.searchsorted(b, merged, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    return KsResult(statistic=d, n_eff=n_eff,
                    p_value_asymptotic=kolmogorov_survival(math.sqrt(n_eff) * d))


def empirical_mean_cov(vectors):
    """Sample mean and unbiased covariance of a stack of vectors."""
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch("expected a 2-d stack of vectors")
    if x.shape[0] < 2:
        raise EmptySample("need at least two vectors")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return mean, cov


@dataclass(frozen=True)
class ProfileTable:
    """Ordered-weight ratio summary across trials on a rescaled-rank grid."""

    x: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray


def summarize_ordered_profile(trials, m_n: float, grid) -> ProfileTable:
    """Median/quartiles of A_(k)/A_(1) across trials, at ranks k = round(x * m_n).

    Ranks clamp to 1 at the bottom; a rank beyond the context length raises
    GridOutOfRange.
    """
    if m_n <= 0:
        raise ValueError("m_n must be positive")
    grid = np.asarray(grid, dtype=float)
    trials = list(trials)
    if not trials:
        raise EmptySample("no trials to summarize")
    ranks = np.maximum(np.rint(grid * m_n).astype(int), 1)
    ratios = np.empty((len(trials), grid.size))
    for ti, snap in enumerate(trials):
        if ranks.max() > snap.n:
            raise GridOutOfRange(
                f"rank {int(ranks.max())} exceeds context length {snap.n}")
        ordered = snap.ordered_weights()
        ratios[ti] = ordered[ranks - 1] / ordered[0]
    q25, med, q75 = np.percentile(ratios, [25.0, 50.0, 75.0], axis=0)
    return ProfileTable(x=grid, median=med, q25=q25, q75=q75)
