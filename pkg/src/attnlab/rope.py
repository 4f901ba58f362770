"""Rotary position rotations, orbit phase averages, and correlated contexts.

Position p acts on the first 2L coordinates by block rotations; the
effective query then walks a deterministic torus orbit, and the critical
limit only feels the density averaged along that orbit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionSnapshot, snapshot_from_scores
from .densities import Context, DensityModel, local_intensity, sample_tokens
from .errors import DimensionMismatch, ZeroVector
from .sphere import normalize

logger = logging.getLogger(__name__)

_PERIOD_CAP = 1_000_000
_RETURN_TOL = 1e-12


@dataclass(frozen=True)
class RopeConfig:
    """Rotation frequencies (radians per position) for coordinate pairs
    (1,2), (3,4), ...; coordinates beyond 2L are left unrotated."""

    frequencies: np.ndarray

    def __post_init__(self):
        freq = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if freq.size < 1:
            raise ValueError("need at least one frequency")
        object.__setattr__(self, "frequencies", freq)

    @property
    def pairs(self) -> int:
        return self.frequencies.size

    @property
    def rotated_dim(self) -> int:
        return 2 * self.pairs


def geometric_frequencies(base: float, pairs: int) -> np.ndarray:
    """The standard geometric frequency ladder base^{-2(l-1)/(2L)}, l = 1..L."""
    l = np.arange(pairs, dtype=float)
    return base ** (-2.0 * l / (2.0 * pairs))


def rope_rotate(config: RopeConfig, p: int, v) -> np.ndarray:
    """Apply the position-p block rotation to v (identity beyond 2L coordinates)."""
    v = np.asarray(v, dtype=float)
    if v.size < config.rotated_dim:
        raise DimensionMismatch(
            f"vector dimension {v.size} < rotated dimension {config.rotated_dim}")
    out = v.copy()
    angles = p * config.frequencies
    c, s = np.cos(angles), np.sin(angles)
    a = v[0:config.rotated_dim:2]
    b = v[1:config.rotated_dim:2]
    out[0:config.rotated_dim:2] = c * a - s * b
    out[1:config.rotated_dim:2] = s * a + c * b
    return out


def query_orbit(config: RopeConfig, q, i: int) -> np.ndarray:
    """The effective query u_i at relative position i (transpose rotation of q)."""
    return rope_rotate(config, -i, q)


def orbit_points(config: RopeConfig, q, positions) -> np.ndarray:
    """Effective queries u_i for every position in ``positions``, shape (n, d)."""
    q = np.asarray(q, dtype=float)
    if q.size < config.rotated_dim:
        raise DimensionMismatch(
            f"query dimension {q.size} < rotated dimension {config.rotated_dim}")
    positions = np.asarray(positions, dtype=float)
    out = np.tile(q, (positions.size, 1))
    angles = np.outer(positions, config.frequencies)
    c, s = np.cos(angles), np.sin(angles)
    a = q[0:config.rotated_dim:2]
    b = q[1:config.rotated_dim:2]
    out[:, 0:config.rotated_dim:2] = c * a + s * b
    out[:, 1:config.rotated_dim:2] = -s * a + c * b
    return out


def detect_period(config: RopeConfig, q, max_period: int) -> int | None:
    """Smallest p <= max_period with u_p back at q within 1e-12, or None."""
    cap = min(max_period, _PERIOD_CAP)
    theta = config.frequencies / (2.0 * math.pi)
    p = np.arange(1, cap + 1)
    frac = np.outer(p, theta) % 1.0
    dist = np.minimum(frac, 1.0 - frac).max(axis=1)
    for idx in np.nonzero(dist < 1e-9)[0]:
        cand = int(p[idx])
        u = query_orbit(config, q, cand)
        if np.max(np.abs(u - np.asarray(q, dtype=float))) <= _RETURN_TOL:
            return cand
    return None


@dataclass(frozen=True)
class OrbitStats:
    """Orbit sample, its intensity average, and Fourier residuals of the phases."""

    orbit_points: np.ndarray
    c_bar: float
    fourier_residuals: dict
    period: int | None = None


def orbit_phase_average(config: RopeConfig, q, model: DensityModel, N: int,
                        wavevectors=()) -> OrbitStats:
    """Average the local intensity along the orbit of effective queries.

    A rational frequency setup (exact orbit return within 1e-12, period <= N)
    is averaged over one exact period; otherwise the first N orbit points are
    used.  ``wavevectors`` are integer vectors k whose empirical phase-sum
    magnitudes |mean_j e^{2 pi i j k.theta}| are recorded.
    """
    if N < 1000:
        raise ValueError("need N >= 10^3 orbit points")
    period = detect_period(config, q, N)
    count = period if period is not None else N
    pts = orbit_points(config, q, np.arange(1, count + 1))
    c_vals = [local_intensity(model, u) for u in pts]
    theta = config.frequencies / (2.0 * math.pi)
    residuals = {}
    j = np.arange(1, N + 1)
    for k in wavevectors:
        k_arr = np.atleast_1d(np.asarray(k, dtype=float))
        phase = 2.0 * math.pi * (k_arr @ theta)
        residuals[tuple(int(v) for v in k_arr)] = abs(np.mean(np.exp(1j * j * phase)))
    return OrbitStats(orbit_points=pts, c_bar=float(np.mean(c_vals)),
                      fourier_residuals=residuals, period=period)


@dataclass(frozen=True)
class CorrelatedTokenModel:
    """Stationary m-dependent tokens: normalized moving averages of i.i.d.
    spherical latents z_i with mixing weights w_0..w_m."""

    dependence_range: int
    mixer: np.ndarray
    base: DensityModel

    def __post_init__(self):
        mixer = np.atleast_1d(np.asarray(self.mixer, dtype=float))
        if self.dependence_range < 0:
            raise ValueError("dependence range m must be >= 0")
        if mixer.size != self.dependence_range + 1:
            raise ValueError("mixer must have m + 1 weights")
        if not np.any(mixer != 0.0):
            raise ValueError("mixer must not be all zero")
        object.__setattr__(self, "mixer", mixer)

    @property
    def latent_window(self) -> int:
        return self.dependence_range + 1

    @property
    def d(self) -> int:
        return self.base.d


def sample_correlated_context(model: CorrelatedTokenModel, n: int, seed: int) -> Context:
    """Draw n tokens x_i = normalize(sum_j w_j z_{i+j}) from n+m i.i.d. latents."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    tokens = correlated_tokens(model, n, rng)
    return Context(tokens=tokens, model=model, seed=int(seed))


def correlated_tokens(model: CorrelatedTokenModel, n: int, rng) -> np.ndarray:
    """Moving-average tokens from an explicit generator (trial-loop building block)."""
    m = model.dependence_range
    z = sample_tokens(model.base, n + m, rng)
    mixed = np.zeros((n, model.d))
    for j, w in enumerate(model.mixer):
        if w != 0.0:
            mixed += w * z[j:j + n]
    norms = np.linalg.norm(mixed, axis=1)
    bad = np.nonzero(norms <= 1e-300)[0]
    resamples = 0
    for idx in bad:
        for _ in range(100):
            fresh = sample_tokens(model.base, model.latent_window, rng)
            v = model.mixer @ fresh
            resamples += 1
            if np.linalg.norm(v) > 1e-300:
                mixed[idx] = v
                norms[idx] = np.linalg.norm(v)
                break
        else:
            raise ZeroVector("mixed token norm underflowed repeatedly")
    if resamples:
        logger.warning("resampled %d degenerate moving-average windows", resamples)
    return mixed / norms[:, None]


def rope_attention_weights(q, context, config: RopeConfig, beta: float) -> AttentionSnapshot:
    """Softmax weights with scores U_i = 1 - <u_i, x_i> along the rotation orbit.

    With all frequencies zero this reproduces plain attention bit for bit.
    """
    tokens = context.tokens if isinstance(context, Context) else np.asarray(context, dtype=float)
    q = np.asarray(q, dtype=float)
    n = tokens.shape[0]
    if np.all(config.frequencies == 0.0):
        scores = np.clip(1.0 - tokens @ q, 0.0, 2.0)
    else:
        u = orbit_points(config, q, np.arange(1, n + 1))
        scores = np.clip(1.0 - np.einsum("ij,ij->i", u, tokens), 0.0, 2.0)
    return snapshot_from_scores(scores, beta)
