"""Vector geometry on the unit sphere S^{d-1}.

All operations are pure functions of their inputs (plus an explicit rng
handle where randomness is involved), so they are safe to call from any
number of workers as long as rng handles are not shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AntipodalPoint, DimensionMismatch, ZeroVector

UNIT_TOL = 1e-12
_MIN_NORM = 1e-300


def normalize(v) -> np.ndarray:
    """Return v / ||v|| as a fresh array.

    Raises ZeroVector when the norm underflows.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise DimensionMismatch(f"expected a vector of dimension >= 2, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if not norm > _MIN_NORM:
        raise ZeroVector("vector norm underflowed")
    return v / norm


def is_unit(v, tol: float = UNIT_TOL) -> bool:
    """Check the unit-norm invariant | ||v|| - 1 | <= tol."""
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def d2q(q, x) -> float:
    """Distance-to-query 1 - <q, x>, clamped to [0, 2].

    Equals half the squared Euclidean distance between unit vectors.
    """
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    if q.shape != x.shape:
        raise DimensionMismatch(f"shapes {q.shape} and {x.shape} differ")
    return float(np.clip(1.0 - float(q @ x), 0.0, 2.0))


def d2q_batch(q, tokens) -> np.ndarray:
    """Distance-to-query for every row of ``tokens``, clamped to [0, 2]."""
    q = np.asarray(q, dtype=float)
    tokens = np.asarray(tokens, dtype=float)
    if tokens.shape[-1] != q.size:
        raise DimensionMismatch(f"token dimension {tokens.shape[-1]} != query dimension {q.size}")
    return np.clip(1.0 - tokens @ q, 0.0, 2.0)


def tangent_project(q, v) -> np.ndarray:
    """Orthogonal projection of v onto the tangent space at q: (Id - qq^T) v."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != v.shape:
        raise DimensionMismatch(f"shapes {q.shape} and {v.shape} differ")
    return v - (q @ v) * q


def projector(q) -> np.ndarray:
    """The tangent projector matrix Id - qq^T."""
    q = np.asarray(q, dtype=float)
    return np.eye(q.size) - np.outer(q, q)


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal basis of the tangent space at ``base``.

    ``basis`` has shape (d-1, d); each row is a unit vector orthogonal to
    ``base`` and to the other rows.
    """

    base: np.ndarray
    basis: np.ndarray

    def to_ambient(self, coords) -> np.ndarray:
        """Map tangent coordinates (length d-1) to an ambient vector."""
        return np.asarray(coords, dtype=float) @ self.basis

    def to_coords(self, v) -> np.ndarray:
        """Coordinates of an ambient tangent vector in this frame."""
        return self.basis @ np.asarray(v, dtype=float)


def tangent_frame(q) -> TangentFrame:
    """Deterministic Gram-Schmidt completion of q to an orthonormal basis.

    Candidate standard basis vectors are processed in order of increasing
    |<q, e_i>| (ties broken by lower index), so the frame is a reproducible
    function of q alone.
    """
    q = normalize(q)
    d = q.size
    order = np.lexsort((np.arange(d), np.abs(q)))
    rows = [q]
    for idx in order:
        if len(rows) == d:
            break
        cand = np.zeros(d)
        cand[idx] = 1.0
        # two Gram-Schmidt passes keep residual inner products ~1e-16
        for _ in range(2):
            for b in rows:
                cand = cand - (b @ cand) * b
        norm = float(np.linalg.norm(cand))
        if norm > 1e-8:
            rows.append(cand / norm)
    if len(rows) != d:
        raise ZeroVector("Gram-Schmidt completion failed")  # unreachable for unit q
    return TangentFrame(base=q, basis=np.array(rows[1:]))


def geodesic_chart(center, x) -> np.ndarray:
    """Logarithmic map of x in the tangent frame at ``center``.

    Returns r * w where r = arccos<center, x> and w holds the frame
    coordinates of the normalized tangent part of x.
    """
    center = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    if center.shape != x.shape:
        raise DimensionMismatch(f"shapes {center.shape} and {x.shape} differ")
    dot = float(np.clip(center @ x, -1.0, 1.0))
    if dot <= -1.0 + 1e-12:
        raise AntipodalPoint("log map undefined at the antipode")
    r = float(np.arccos(dot))
    tangent = x - dot * center
    tnorm = float(np.linalg.norm(tangent))
    frame = tangent_frame(center)
    if tnorm <= 1e-300 or r == 0.0:
        return np.zeros(center.size - 1)
    return r * frame.to_coords(tangent / tnorm)


def chart_point(center, coords) -> np.ndarray:
    """Exponential map: the point at chart coordinates ``coords`` (inverse of geodesic_chart)."""
    center = np.asarray(center, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if coords.size != center.size - 1:
        raise DimensionMismatch(f"expected {center.size - 1} chart coordinates, got {coords.size}")
    r = float(np.linalg.norm(coords))
    if r == 0.0:
        return center.copy()
    frame = tangent_frame(center)
    w = frame.to_ambient(coords / r)
    return np.cos(r) * center + np.sin(r) * w


def sample_tangent_direction(q, rng) -> np.ndarray:
    """One uniform draw from the unit sphere of the tangent space at q.

    For d = 2 the tangent unit sphere is the two-point set {+b, -b} and
    each sign has probability 1/2.
    """
    return tangent_directions(q, 1, rng)[0]


def tangent_directions(q, size: int, rng) -> np.ndarray:
    """Batch of i.i.d. uniform tangent unit vectors at q, shape (size, d)."""
    q = np.asarray(q, dtype=float)
    d = q.size
    if d == 2:
        b = tangent_frame(q).basis[0]
        signs = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return signs[:, None] * b[None, :]
    out = np.empty((size, d))
    remaining = np.arange(size)
    while remaining.size:
        g = rng.standard_normal((remaining.size, d))
        g -= np.outer(g @ q, q)
        norms = np.linalg.norm(g, axis=1)
        good = norms > 1e-12
        idx = remaining[good]
        out[idx] = g[good] / norms[good, None]
        remaining = remaining[~good]
    # one more projection pass so |<theta, q>| stays at rounding level
    out -= np.outer(out @ q, q)
    out /= np.linalg.norm(out, axis=1)[:, None]
    return out
