"""Probability densities on the sphere with i.i.d. sampling.

Every model evaluates an unnormalized density, knows (or can estimate) its
normalization w.r.t. surface measure, and exposes the local intensity
constant and spherical log-density gradients used by the limit laws.

Models are immutable after construction; sampling takes an explicit
per-worker rng, so concurrent sampling from a shared model is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EnvelopeViolation, UnnormalizedDensity
from .sphere import normalize, tangent_frame, tangent_project, tangent_directions, chart_point

_FD_STEP = 1e-5  # chart finite-difference step for C^2 densities
_INV_CDF_NODES = 32769
_REJECTION_BATCH = 65536


def sphere_surface_area(m: int) -> float:
    """Surface area of S^m; by convention S^0 carries counting measure of mass 2."""
    if m < 0:
        raise DimensionMismatch(f"no sphere of dimension {m}")
    if m == 0:
        return 2.0
    return 2.0 * math.pi ** ((m + 1) / 2.0) / math.gamma((m + 1) / 2.0)


def _uniform_sphere(d: int, size: int, rng) -> np.ndarray:
    """i.i.d. uniform points on S^{d-1} via normalized Gaussians."""
    g = rng.standard_normal((size, d))
    norms = np.linalg.norm(g, axis=1)
    bad = norms <= 1e-12
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
        bad = norms <= 1e-12
    return g / norms[:, None]


class DensityModel:
    """Base class: a positive density on S^{d-1} w.r.t. surface measure."""

    d: int
    envelope_bound: float  # upper bound on the *unnormalized* density

    def log_unnormalized(self, x: np.ndarray) -> np.ndarray:
        """Log of the unnormalized density at one point (d,) or a batch (n, d)."""
        raise NotImplementedError

    @property
    def normalization(self):
        """Integral of the unnormalized density over the sphere, or None if unknown."""
        raise NotImplementedError

    @property
    def is_normalized(self) -> bool:
        return self.normalization is not None

    def grad_log(self, q: np.ndarray):
        """Analytic spherical gradient of log density, or None to request finite differences."""
        return None

    def _sample(self, n: int, rng) -> np.ndarray:
        """i.i.d. tokens, shape (n, d)."""
        raise NotImplementedError


class UniformDensity(DensityModel):
    """Uniform distribution on S^{d-1}."""

    def __init__(self, d: int):
        if d < 2:
            raise DimensionMismatch("need d >= 2")
        self.d = d
        self.envelope_bound = 1.0
        self._norm = sphere_surface_area(d - 1)

    def log_unnormalized(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    @property
    def normalization(self):
        return self._norm

    def grad_log(self, q):
        return np.zeros(self.d)

    def _sample(self, n, rng):
        return _uniform_sphere(self.d, n, rng)

    def __repr__(self):
        return f"UniformDensity(d={self.d})"


class VonMisesFisherDensity(DensityModel):
    """von Mises-Fisher density exp(kappa <mu, x>) / Z on S^{d-1}.

    Sampling draws the <mu, x> marginal by inverse CDF (exact for d=3,
    dense-grid inversion otherwise) and attaches a uniform tangent
    direction.  Moderate concentrations (kappa <~ 100) are supported.
    """

    def __init__(self, mean, concentration: float):
        mean = normalize(mean)
        if concentration < 0:
            raise ValueError("concentration must be >= 0")
        self.d = mean.size
        self.mean = mean
        self.kappa = float(concentration)
        self.envelope_bound = math.exp(self.kappa)
        self._norm = self._compute_normalization()
        self._inv_cdf = None  # built lazily for the grid path

    def _compute_normalization(self) -> float:
        d, kappa = self.d, self.kappa
        if kappa == 0.0:
            return sphere_surface_area(d - 1)
        if d == 2:
            # periodic trapezoid on the circle: spectrally accurate
            m = 1024
            phi = 2.0 * math.pi * np.arange(m) / m
            return float(2.0 * math.pi * np.mean(np.exp(kappa * np.cos(phi))))
        nodes, weights = np.polynomial.legendre.leggauss(400)
        integrand = np.exp(kappa * nodes) * (1.0 - nodes**2) ** ((d - 3) / 2.0)
        return float(sphere_surface_area(d - 2) * np.sum(weights * integrand))

    def log_unnormalized(self, x):
        x = np.asarray(x, dtype=float)
        return self.kappa * (x @ self.mean)

    @property
    def normalization(self):
        return self._norm

    def grad_log(self, q):
        return self.kappa * tangent_project(q, self.mean)

    def _marginal_inverse_cdf(self):
        """Grid inverse CDF of t = <mu, x>, density prop. to e^{kt}(1-t^2)^{(d-3)/2}."""
        if self._inv_cdf is None:
            t = np.linspace(-1.0, 1.0, _INV_CDF_NODES)
            logf = self.kappa * t
            if self.d > 3:
                with np.errstate(divide="ignore"):
                    logf = logf + ((self.d - 3) / 2.0) * np.log1p(-t**2)
            f = np.exp(logf - logf.max())
            cdf = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) * 0.5 * np.diff(t))])
            cdf /= cdf[-1]
            self._inv_cdf = (cdf, t)
        return self._inv_cdf

    def _sample_marginal(self, n, rng) -> np.ndarray:
        u = rng.random(n)
        if self.kappa == 0.0:
            cdf, t = self._marginal_inverse_cdf()
            return np.interp(u, cdf, t)
        if self.d == 3:
            # closed-form inverse: CDF(t) = (e^{k t} - e^{-k}) / (e^k - e^{-k})
            return 1.0 + np.log(u * (1.0 - math.exp(-2.0 * self.kappa)) + math.exp(-2.0 * self.kappa)) / self.kappa
        cdf, t = self._marginal_inverse_cdf()
        return np.interp(u, cdf, t)

    def _sample(self, n, rng):
        if self.kappa == 0.0:
            return _uniform_sphere(self.d, n, rng)
        if self.d == 2:
            # sample the angle from the mode directly
            phi_grid = np.linspace(-math.pi, math.pi, _INV_CDF_NODES)
            f = np.exp(self.kappa * (np.cos(phi_grid) - 1.0))
            cdf = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) * 0.5 * np.diff(phi_grid))])
            cdf /= cdf[-1]
            phi = np.interp(rng.random(n), cdf, phi_grid)
            perp = tangent_frame(self.mean).basis[0]
            return np.cos(phi)[:, None] * self.mean[None, :] + np.sin(phi)[:, None] * perp[None, :]
        t = self._sample_marginal(n, rng)
        theta = tangent_directions(self.mean, n, rng)
        x = t[:, None] * self.mean[None, :] + np.sqrt(np.clip(1.0 - t**2, 0.0, None))[:, None] * theta
        return x / np.linalg.norm(x, axis=1)[:, None]

    def __repr__(self):
        return f"VonMisesFisherDensity(d={self.d}, kappa={self.kappa})"


class ExpBilinearDensity(DensityModel):
    """Density proportional to exp(x1 * x2) on S^2 (d = 3 only).

    The sup of the unnormalized density is e^{1/2}; e is used as a safe,
    loose rejection envelope.
    """

    def __init__(self):
        self.d = 3
        self.envelope_bound = math.e
        self._norm = self._compute_normalization()

    @staticmethod
    def _compute_normalization() -> float:
        # product quadrature in spherical coordinates; integrand is smooth
        nodes, weights = np.polynomial.legendre.leggauss(200)  # cos(theta) nodes
        m = 512
        phi = 2.0 * math.pi * np.arange(m) / m
        s2 = 1.0 - nodes**2
        vals = np.exp(np.outer(s2 * 0.5, np.sin(2.0 * phi)))  # x1 x2 = sin^2(theta) cos(phi) sin(phi)
        inner = vals.mean(axis=1) * 2.0 * math.pi
        return float(np.sum(weights * inner))

    def log_unnormalized(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] * x[..., 1]

    @property
    def normalization(self):
        return self._norm

    def grad_log(self, q):
        q = np.asarray(q, dtype=float)
        return tangent_project(q, np.array([q[1], q[0], 0.0]))

    def _sample(self, n, rng):
        return _rejection_sample(self, n, rng)

    def __repr__(self):
        return "ExpBilinearDensity()"


class CustomDensity(DensityModel):
    """User-supplied log-unnormalized density with a rejection envelope.

    ``normalization`` stays None (with the matching stderr unset) until a
    Monte Carlo estimate is attached via ``finalize_normalization``;
    operations that need a normalized density raise UnnormalizedDensity
    before then.
    """

    def __init__(self, log_density, envelope_bound: float, d: int,
                 normalization=None, normalization_stderr=None, label: str = "custom"):
        if envelope_bound <= 0:
            raise ValueError("envelope_bound must be positive")
        self.d = d
        self._log_density = log_density
        self.envelope_bound = float(envelope_bound)
        self._norm = normalization
        self.normalization_stderr = normalization_stderr
        self.label = label

    def log_unnormalized(self, x):
        return np.asarray(self._log_density(np.asarray(x, dtype=float)), dtype=float)

    @property
    def normalization(self):
        return self._norm

    def _sample(self, n, rng):
        return _rejection_sample(self, n, rng)

    def __repr__(self):
        return f"CustomDensity({self.label!r}, d={self.d})"


@dataclass(frozen=True)
class Context:
    """One sampled context: n tokens on S^{d-1} plus provenance."""

    tokens: np.ndarray
    model: object
    seed: int

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]


def _rejection_sample(model: DensityModel, n: int, rng) -> np.ndarray:
    """Exact i.i.d. rejection sampling against the uniform proposal.

    Raises EnvelopeViolation (without clipping) if any proposal beats the
    stated envelope.
    """
    log_env = math.log(model.envelope_bound)
    out = np.empty((n, model.d))
    got = 0
    while got < n:
        batch = min(_REJECTION_BATCH, max(4 * (n - got), 1024))
        props = _uniform_sphere(model.d, batch, rng)
        logf = model.log_unnormalized(props)
        if np.any(logf > log_env + 1e-12):
            raise EnvelopeViolation(
                f"unnormalized density exceeds envelope_bound={model.envelope_bound}")
        accept = np.log(rng.random(batch)) < logf - log_env
        take = min(int(accept.sum()), n - got)
        out[got:got + take] = props[accept][:take]
        got += take
    return out


def rejection_acceptance_rate(model: DensityModel, proposals: int, rng) -> float:
    """Empirical acceptance rate of the rejection sampler over a fixed proposal count."""
    props = _uniform_sphere(model.d, proposals, rng)
    logf = model.log_unnormalized(props)
    accept = np.log(rng.random(proposals)) < logf - math.log(model.envelope_bound)
    return float(np.mean(accept))


def density_at(model: DensityModel, x) -> float:
    """Normalized density w.r.t. surface measure, or the unnormalized value
    when the model's normalization is unknown (inspect ``model.is_normalized``)."""
    val = float(np.exp(model.log_unnormalized(np.asarray(x, dtype=float))))
    if model.is_normalized:
        return val / model.normalization
    return val


def estimate_normalization(model: DensityModel, samples: int, rng):
    """Monte Carlo estimate of the unnormalized density's integral.

    Uniform-proposal average scaled by the sphere's surface area; returns
    (value, stderr).
    """
    if samples < 1000:
        raise ValueError("need at least 10^3 samples")
    area = sphere_surface_area(model.d - 1)
    total = 0.0
    total_sq = 0.0
    remaining = samples
    while remaining:
        batch = min(remaining, 1 << 20)
        vals = np.exp(model.log_unnormalized(_uniform_sphere(model.d, batch, rng)))
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        remaining -= batch
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    return area * mean, area * math.sqrt(var / samples)


def finalize_normalization(model: CustomDensity, samples: int, rng) -> CustomDensity:
    """Return a copy of a custom model with its MC normalization cached."""
    value, stderr = estimate_normalization(model, samples, rng)
    return CustomDensity(model._log_density, model.envelope_bound, model.d,
                         normalization=value, normalization_stderr=stderr, label=model.label)


def sample_context(model: DensityModel, n: int, seed: int) -> Context:
    """i.i.d. context draw; identical (model, n, seed) gives bit-identical tokens."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    return Context(tokens=model._sample(n, rng), model=model, seed=int(seed))


def sample_tokens(model: DensityModel, n: int, rng) -> np.ndarray:
    """i.i.d. tokens from an explicit generator (building block for trial loops)."""
    return model._sample(n, rng)


def local_intensity(model: DensityModel, q) -> float:
    """Local intensity of near matches: the small-t slope of the
    distance-to-query CDF on the t^{1/alpha} scale, alpha = 2/(d-1)."""
    if not model.is_normalized:
        raise UnnormalizedDensity("local intensity needs a normalized density")
    d = model.d
    alpha = 2.0 / (d - 1)
    rho = density_at(model, q)
    return 2.0 ** (1.0 / alpha) * sphere_surface_area(d - 2) * rho / (d - 1)


def grad_log_density(model: DensityModel, q) -> np.ndarray:
    """Spherical gradient of log density at q.

    Analytic for the built-in variants; central finite differences in the
    geodesic chart (step 1e-5) otherwise.
    """
    q = normalize(q)
    analytic = model.grad_log(q)
    if analytic is not None:
        return analytic
    frame = tangent_frame(q)
    coords = np.zeros(q.size - 1)
    grad = np.zeros(q.size)
    for j in range(q.size - 1):
        step = np.zeros(q.size - 1)
        step[j] = _FD_STEP
        fp = float(model.log_unnormalized(chart_point(q, step)))
        fm = float(model.log_unnormalized(chart_point(q, -step)))
        coords[j] = (fp - fm) / (2.0 * _FD_STEP)
    for j in range(q.size - 1):
        grad += coords[j] * frame.basis[j]
    return grad


def empirical_tail(model: DensityModel, q, t: float, samples: int, rng) -> float:
    """Monte Carlo estimate of F(t) = P(d2q(q, X) <= t) under the model."""
    if not 0.0 < t <= 2.0:
        raise ValueError("t must lie in (0, 2]")
    if samples < 1000:
        raise ValueError("need at least 10^3 samples")
    q = np.asarray(q, dtype=float)
    hits = 0
    remaining = samples
    while remaining:
        batch = min(remaining, 1 << 20)
        toks = model._sample(batch, rng)
        hits += int(np.count_nonzero(1.0 - toks @ q <= t))
        remaining -= batch
    return hits / samples
