"""Closed-form predictions of the scaling limits.

Special functions, the critical inverse-temperature scale, finite-n regime
diagnostics, subcritical ordered-weight profiles, and the drift/covariance
of the output displacement.  Everything here is pure and stateless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import DensityModel, density_at, grad_log_density, local_intensity
from .errors import DomainError, UnnormalizedDensity
from .sphere import normalize, projector

# Lanczos coefficients, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

_EPS = 1e-16
_MAX_ITER = 600

LABEL_SUPERCRITICAL = "Supercritical"
LABEL_CRITICAL = "Critical"
LABEL_SUB_FLUCTUATION = "SubcriticalFluctuation"
LABEL_SUB_MIXED = "SubcriticalMixed"
LABEL_SUB_DRIFT = "SubcriticalDrift"
LABEL_FROZEN = "FrozenBeta"

DEFAULT_LO = 0.2
DEFAULT_HI = 5.0


def ln_gamma(s: float) -> float:
    """log Gamma(s) for s > 0 by the Lanczos approximation."""
    if s <= 0.0:
        raise DomainError("ln_gamma needs s > 0")
    if s < 0.5:
        # reflection keeps the approximation in its accurate range
        return math.log(math.pi / math.sin(math.pi * s)) - ln_gamma(1.0 - s)
    x = s - 1.0
    acc = _LANCZOS[0]
    for i in range(1, len(_LANCZOS)):
        acc += _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * math.log(2.0 * math.pi) + (x + 0.5) * math.log(t) - t + math.log(acc)


def gamma_fn(s: float) -> float:
    """Gamma(s) for s > 0."""
    return math.exp(ln_gamma(s))


def _incgamma_series(s: float, z: float) -> float:
    """Regularized lower incomplete gamma by series; converges for z < s + 1."""
    if z == 0.0:
        return 0.0
    term = 1.0 / s
    total = term
    a = s
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= z / a
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-z + s * math.log(z) - ln_gamma(s))


def _incgamma_cf(s: float, z: float) -> float:
    """Regularized *upper* incomplete gamma by continued fraction (modified Lentz)."""
    tiny = 1e-300
    b = z + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-z + s * math.log(z) - ln_gamma(s)) * h


def reg_lower_incomplete_gamma(s: float, z: float) -> float:
    """P(s, z) = gamma_inc(s, z) / Gamma(s) in [0, 1]."""
    if s <= 0.0:
        raise DomainError("reg_lower_incomplete_gamma needs s > 0")
    if z < 0.0:
        raise DomainError("reg_lower_incomplete_gamma needs z >= 0")
    if z == 0.0:
        return 0.0
    if z < s + 1.0:
        return min(_incgamma_series(s, z), 1.0)
    return min(max(1.0 - _incgamma_cf(s, z), 0.0), 1.0)


def reg_upper_incomplete_gamma(s: float, z: float) -> float:
    """Q(s, z) = 1 - P(s, z)."""
    if s <= 0.0:
        raise DomainError("reg_upper_incomplete_gamma needs s > 0")
    if z < 0.0:
        raise DomainError("reg_upper_incomplete_gamma needs z >= 0")
    if z == 0.0:
        return 1.0
    if z < s + 1.0:
        return min(max(1.0 - _incgamma_series(s, z), 0.0), 1.0)
    return min(_incgamma_cf(s, z), 1.0)


def alpha_exponent(d: int) -> float:
    """The tail exponent alpha = 2 / (d - 1)."""
    if d < 2:
        raise DomainError("need d >= 2")
    return 2.0 / (d - 1)


def critical_beta(n: int, d: int, gamma: float) -> float:
    """The critical inverse-temperature scale gamma * n^{2/(d-1)}."""
    if n < 1 or gamma <= 0:
        raise DomainError("need n >= 1 and gamma > 0")
    return gamma * float(n) ** alpha_exponent(d)


@dataclass(frozen=True)
class RegimeClassification:
    """Finite-n diagnostics plus the predicted asymptotic regime label."""

    alpha: float
    gamma_n: float
    tau_n: float
    window_m_n: float
    label: str
    lo: float = DEFAULT_LO
    hi: float = DEFAULT_HI

    @property
    def eta(self) -> float:
        """Derived exponent 1/alpha - 1 = (d-3)/2."""
        return 1.0 / self.alpha - 1.0


def classify_regime(n: int, beta: float, d: int, Cq: float,
                    lo: float = DEFAULT_LO, hi: float = DEFAULT_HI,
                    schedule_exponent=None) -> RegimeClassification:
    """Label a finite (n, beta) pair by its predicted asymptotic regime.

    The thresholds lo < hi on gamma_n (and on tau_n for the subcritical
    sub-phases) are a finite-n convention, reported alongside the label.
    ``schedule_exponent`` = 0 marks a beta that does not grow with n.
    """
    if not lo < hi:
        raise DomainError("need lo < hi")
    if beta <= 0 or n < 1 or Cq <= 0:
        raise DomainError("need beta > 0, n >= 1, Cq > 0")
    alpha = alpha_exponent(d)
    gamma_n = beta * float(n) ** (-alpha)
    tau_n = beta ** (1.0 + alpha) * float(n) ** (-alpha)
    m_n = Cq * n * beta ** (-1.0 / alpha)
    if schedule_exponent is not None and schedule_exponent == 0.0:
        label = LABEL_FROZEN
    elif gamma_n > hi:
        label = LABEL_SUPERCRITICAL
    elif gamma_n >= lo:
        label = LABEL_CRITICAL
    elif tau_n > hi:
        label = LABEL_SUB_FLUCTUATION
    elif tau_n >= lo:
        label = LABEL_SUB_MIXED
    else:
        label = LABEL_SUB_DRIFT
    return RegimeClassification(alpha=alpha, gamma_n=gamma_n, tau_n=tau_n,
                                window_m_n=m_n, label=label, lo=lo, hi=hi)


def subcritical_profile(x, alpha: float):
    """Limiting ordered-weight ratio profile exp(-x^alpha)."""
    return np.exp(-np.power(x, alpha))


def subcritical_absolute_weight(x, alpha: float):
    """Limiting window-scaled weight exp(-x^alpha) / Gamma(1/alpha + 1)."""
    return np.exp(-np.power(x, alpha)) / gamma_fn(1.0 / alpha + 1.0)


def subcritical_cumulative_mass(x: float, alpha: float) -> float:
    """Limiting cumulative mass of the top x-fraction of the active window."""
    if x < 0:
        raise DomainError("need x >= 0")
    return reg_lower_incomplete_gamma(1.0 / alpha, float(x) ** alpha)


def weibull_cdf(r, alpha: float):
    """CDF 1 - exp(-r^{1/alpha}) of the rescaled nearest distance-to-query."""
    return 1.0 - np.exp(-np.power(r, 1.0 / alpha))


def drift_constant(d: int) -> float:
    """The dimensional covariance constant 2^{-d} pi^{-(d-1)/2}."""
    return 2.0 ** (-d) * math.pi ** (-(d - 1) / 2.0)


@dataclass(frozen=True)
class DriftCov:
    """Deterministic drift vector and Gaussian covariance of the subcritical output."""

    drift: np.ndarray
    covariance: np.ndarray
    c_d: float


def drift_and_covariance(model: DensityModel, q, d=None) -> DriftCov:
    """Drift grad_S log rho(q) - ((d-1)/2) q and covariance (c_d / rho(q)) P_q."""
    q = normalize(q)
    if d is None:
        d = q.size
    if not model.is_normalized:
        raise UnnormalizedDensity("drift/covariance need a normalized density")
    rho = density_at(model, q)
    drift = grad_log_density(model, q) - ((d - 1) / 2.0) * q
    c_d = drift_constant(d)
    cov = (c_d / rho) * projector(q)
    return DriftCov(drift=drift, covariance=cov, c_d=c_d)


def local_moment_predictions(beta: float, model: DensityModel, q, d=None):
    """Leading-order moments of (x - q) e^{-beta T} under the context law.

    Returns (first_moment_vector, second_moment_tangential_scale); the
    second-moment matrix is the scale times the tangent projector.
    """
    q = normalize(q)
    if d is None:
        d = q.size
    alpha = alpha_exponent(d)
    Cq = local_intensity(model, q)
    gam = gamma_fn(1.0 / alpha + 1.0)
    dc = drift_and_covariance(model, q, d)
    first = Cq * gam * beta ** (-1.0 / alpha - 1.0) * dc.drift
    second_scale = Cq * gam * (2.0 * beta) ** (-1.0 / alpha - 1.0)
    return first, second_scale
