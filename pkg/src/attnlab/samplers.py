"""Exact samplers for the limiting random objects.

Atoms of the limiting point process come from cumulative unit-exponential
arrivals mapped through the inverse intensity; truncation is certified by
the closed-form expected residual mass beyond the last atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientAtoms, NonTermination
from .limits import gamma_fn, reg_upper_incomplete_gamma
from .sphere import sample_tangent_direction, tangent_directions

_MAX_ATOMS = 1_000_000
_BLOCK = 64

DEFAULT_TAIL_EPSILON = 1e-8
DEFAULT_K_MIN = 50


@dataclass(frozen=True)
class PointProcessSample:
    """Truncated increasing atoms Y_1 < Y_2 < ... with a tail certificate.

    ``tail_bound`` is the expected residual sum_{i>K} e^{-Y_i} given the
    intensity, guaranteed <= tail_epsilon * sum_{i<=K} e^{-Y_i}.
    """

    atoms: np.ndarray
    arrivals: np.ndarray
    tail_bound: float
    c: float
    gamma: float
    alpha: float


@dataclass(frozen=True)
class MarkedAtoms:
    """Radial atoms with i.i.d. uniform tangent-sphere marks."""

    atoms: np.ndarray
    marks: np.ndarray
    tail_bound: float


def atoms_from_arrivals(arrivals, c: float, gamma: float, alpha: float) -> np.ndarray:
    """Map exponential-arrival partial sums to atoms: Y_i = gamma (G_i / c)^alpha."""
    return gamma * (np.asarray(arrivals, dtype=float) / c) ** alpha


def expected_residual_mass(y: float, c: float, gamma: float, alpha: float) -> float:
    """Closed-form E integral_y^inf e^{-s} dLambda(s) for Lambda([0,s]) = c (s/gamma)^{1/alpha}."""
    s = 1.0 / alpha
    return c * gamma ** (-s) * gamma_fn(s + 1.0) * reg_upper_incomplete_gamma(s, y)


def sample_ppp_atoms(c: float, gamma: float, alpha: float,
                     tail_epsilon: float = DEFAULT_TAIL_EPSILON,
                     k_min: int = DEFAULT_K_MIN, rng=None) -> PointProcessSample:
    """Draw the increasing atoms of the point process with intensity
    Lambda([0, y]) = c (y / gamma)^{1/alpha}, truncated once the certified
    residual drops below tail_epsilon times the retained mass."""
    if not 0.0 < tail_epsilon <= 1e-3:
        raise ValueError("tail_epsilon must lie in (0, 1e-3]")
    if k_min < 1:
        raise ValueError("k_min must be >= 1")
    if c <= 0 or gamma <= 0 or alpha <= 0:
        raise ValueError("c, gamma, alpha must be positive")
    arrivals = np.empty(0)
    atoms = np.empty(0)
    partial = 0.0
    k = 0
    while True:
        new = np.cumsum(rng.standard_exponential(_BLOCK))
        new += arrivals[-1] if arrivals.size else 0.0
        arrivals = np.concatenate([arrivals, new])
        block_atoms = atoms_from_arrivals(new, c, gamma, alpha)
        atoms = np.concatenate([atoms, block_atoms])
        for y in block_atoms:
            k += 1
            partial += math.exp(-y)
            if k >= k_min:
                residual = expected_residual_mass(y, c, gamma, alpha)
                if residual <= tail_epsilon * partial:
                    return PointProcessSample(
                        atoms=atoms[:k], arrivals=arrivals[:k],
                        tail_bound=residual, c=c, gamma=gamma, alpha=alpha)
        if k >= _MAX_ATOMS:
            raise NonTermination(f"no tail certificate after {_MAX_ATOMS} atoms")


def limiting_ordered_weights(sample: PointProcessSample, k: int) -> np.ndarray:
    """The first k limiting ordered weights W_i = e^{-Y_i} / sum_j e^{-Y_j}."""
    if k > sample.atoms.size:
        raise InsufficientAtoms(f"sample holds {sample.atoms.size} atoms, need {k}")
    # shift by the smallest atom so large radii cannot underflow the ratio
    mass = np.exp(-(sample.atoms - sample.atoms[0]))
    return mass[:k] / mass.sum()


def sample_marked_ppp(c: float, gamma: float, alpha: float, q,
                      tail_epsilon: float = DEFAULT_TAIL_EPSILON,
                      k_min: int = DEFAULT_K_MIN, rng=None) -> MarkedAtoms:
    """Marked version: radial atoms as above, marks i.i.d. uniform on the
    tangent unit sphere at q, independent of the radii."""
    radial = sample_ppp_atoms(c, gamma, alpha, tail_epsilon, k_min, rng)
    marks = tangent_directions(np.asarray(q, dtype=float), radial.atoms.size, rng)
    return MarkedAtoms(atoms=radial.atoms, marks=marks, tail_bound=radial.tail_bound)


def sample_critical_output(marked: MarkedAtoms) -> np.ndarray:
    """The critical output functional: softmax-weighted tangent displacement
    (sum e^{-y_i} sqrt(2 y_i) theta_i) / (sum e^{-y_i})."""
    if marked.atoms.size < 1:
        raise InsufficientAtoms("need at least one atom")
    mass = np.exp(-(marked.atoms - marked.atoms.min()))  # shift-invariant ratio
    numer = (mass * np.sqrt(2.0 * marked.atoms)) @ marked.marks
    return numer / mass.sum()


def sample_supercritical_output(alpha: float, q, rng) -> np.ndarray:
    """One draw of sqrt(2 R) Theta: R has tail P(R > r) = e^{-r^{1/alpha}}
    (inverse CDF), Theta uniform tangent, independent."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = 1.0 - rng.random()  # in (0, 1]
    r = (-math.log(u)) ** alpha
    theta = sample_tangent_direction(np.asarray(q, dtype=float), rng)
    return math.sqrt(2.0 * r) * theta


def sample_supercritical_outputs(alpha: float, q, size: int, rng) -> np.ndarray:
    """Batch of i.i.d. supercritical output draws, shape (size, d)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = 1.0 - rng.random(size)
    r = (-np.log(u)) ** alpha
    thetas = tangent_directions(np.asarray(q, dtype=float), size, rng)
    return np.sqrt(2.0 * r)[:, None] * thetas
