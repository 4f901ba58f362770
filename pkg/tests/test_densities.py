import math

import numpy as np
import pytest
from scipy import integrate

from attnlab import densities, sphere
from attnlab.errors import EnvelopeViolation, UnnormalizedDensity


def test_surface_areas():
    assert densities.sphere_surface_area(0) == 2.0
    assert densities.sphere_surface_area(1) == pytest.approx(2.0 * math.pi)
    assert densities.sphere_surface_area(2) == pytest.approx(4.0 * math.pi)
    assert densities.sphere_surface_area(3) == pytest.approx(2.0 * math.pi**2)


def test_density_at_uniform():
    m3 = densities.UniformDensity(3)
    assert densities.density_at(m3, [0.0, 1.0, 0.0]) == pytest.approx(1.0 / (4.0 * math.pi))
    m2 = densities.UniformDensity(2)
    assert densities.density_at(m2, [1.0, 0.0]) == pytest.approx(1.0 / (2.0 * math.pi))


def test_density_at_exp_bilinear_vs_mc_normalization():
    model = densities.ExpBilinearDensity()
    rng = np.random.default_rng(100)
    z_mc, stderr = densities.estimate_normalization(model, 10**6, rng)
    assert abs(model.normalization - z_mc) <= 3.0 * stderr
    x = np.array([1.0, 0.0, 0.0])
    assert densities.density_at(model, x) == pytest.approx(1.0 / model.normalization)


def test_estimate_normalization_uniform_and_vmf0():
    rng = np.random.default_rng(101)
    for model in [densities.UniformDensity(3),
                  densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), 0.0)]:
        val, stderr = densities.estimate_normalization(model, 10**4, rng)
        area = densities.sphere_surface_area(model.d - 1)
        # constant integrand: the MC estimate is exact
        assert abs(val - area) <= max(3.0 * stderr, 1e-9)


def test_estimate_normalization_against_larger_run():
    model = densities.ExpBilinearDensity()
    small, stderr = densities.estimate_normalization(model, 10**6, np.random.default_rng(7))
    big, _ = densities.estimate_normalization(model, 10**7, np.random.default_rng(8))
    assert abs(small - big) <= 3.0 * stderr


def test_vmf_normalization_closed_form_d3():
    # Z = 4 pi sinh(k) / k on S^2
    for kappa in [0.5, 2.0, 10.0]:
        model = densities.VonMisesFisherDensity(np.array([0.0, 0.0, 1.0]), kappa)
        expected = 4.0 * math.pi * math.sinh(kappa) / kappa
        assert model.normalization == pytest.approx(expected, rel=1e-12)


def test_sample_context_uniform_clt():
    model = densities.UniformDensity(4)
    ctx = densities.sample_context(model, 10**5, seed=42)
    assert ctx.tokens.shape == (10**5, 4)
    np.testing.assert_allclose(np.linalg.norm(ctx.tokens, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(ctx.tokens.mean(axis=0)) <= 0.02


def test_sample_context_vmf_mean_against_quadrature():
    kappa = 5.0
    model = densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), kappa)
    ctx = densities.sample_context(model, 10**5, seed=43)
    num = integrate.quad(lambda t: t * math.exp(kappa * t), -1.0, 1.0)[0]
    den = integrate.quad(lambda t: math.exp(kappa * t), -1.0, 1.0)[0]
    assert abs(ctx.tokens[:, 0].mean() - num / den) <= 0.01


def test_sample_context_vmf_grid_path_d5():
    kappa = 3.0
    model = densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0, 0.0, 0.0]), kappa)
    ctx = densities.sample_context(model, 10**5, seed=44)
    f = lambda t: math.exp(kappa * t) * (1.0 - t**2)
    num = integrate.quad(lambda t: t * f(t), -1.0, 1.0)[0]
    den = integrate.quad(f, -1.0, 1.0)[0]
    assert abs(ctx.tokens[:, 0].mean() - num / den) <= 0.01


def test_sample_context_vmf_circle():
    kappa = 2.0
    model = densities.VonMisesFisherDensity(np.array([0.0, 1.0]), kappa)
    ctx = densities.sample_context(model, 10**5, seed=45)
    f = lambda p: math.exp(kappa * math.cos(p))
    num = integrate.quad(lambda p: math.cos(p) * f(p), -math.pi, math.pi)[0]
    den = integrate.quad(f, -math.pi, math.pi)[0]
    assert abs(ctx.tokens[:, 1].mean() - num / den) <= 0.01


def test_exp_bilinear_acceptance_rate():
    model = densities.ExpBilinearDensity()
    rate = densities.rejection_acceptance_rate(model, 10**4, np.random.default_rng(3))
    assert 1.0 / (math.e * 1.05) <= rate <= 1.0


def test_rejection_envelope_audit():
    # 10^6 uniform audit points never beat the envelope
    rng = np.random.default_rng(104)
    for model in [densities.ExpBilinearDensity(),
                  densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), 4.0)]:
        pts = densities.sample_tokens(densities.UniformDensity(model.d), 10**6, rng)
        assert np.max(model.log_unnormalized(pts)) <= math.log(model.envelope_bound) + 1e-12


def test_envelope_violation_raises():
    lying = densities.CustomDensity(lambda x: 5.0 * x[..., 0], envelope_bound=1.5, d=3)
    with pytest.raises(EnvelopeViolation):
        densities.sample_context(lying, 100, seed=0)


def test_sample_context_determinism():
    model = densities.ExpBilinearDensity()
    a = densities.sample_context(model, 512, seed=99)
    b = densities.sample_context(model, 512, seed=99)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    c = densities.sample_context(model, 512, seed=100)
    assert not np.array_equal(a.tokens, c.tokens)


def test_local_intensity_uniform_d3_with_mc_oracle():
    model = densities.UniformDensity(3)
    q = np.array([0.0, 0.0, 1.0])
    assert densities.local_intensity(model, q) == pytest.approx(0.5, abs=1e-12)
    # oracle: F(t) t^{-1} at t = 1e-4 from 10^7 samples
    t = 1e-4
    est = densities.empirical_tail(model, q, t, 10**7, np.random.default_rng(105)) / t
    stderr = math.sqrt(0.5 * t / 10**7) / t
    assert abs(est - 0.5) <= 3.0 * stderr


def test_local_intensity_uniform_d2_closed_form():
    model = densities.UniformDensity(2)
    q = np.array([1.0, 0.0])
    val = densities.local_intensity(model, q)
    assert val == pytest.approx(math.sqrt(2.0) / math.pi, rel=1e-12)
    # closed-form circle tail F(t) = arccos(1-t)/pi; small-t slope on sqrt scale
    t = 1e-8
    slope = (math.acos(1.0 - t) / math.pi) / math.sqrt(t)
    assert val == pytest.approx(slope, rel=1e-6)


def test_local_intensity_vmf_zero_kappa_matches_uniform():
    q = np.array([0.0, 1.0, 0.0])
    uni = densities.local_intensity(densities.UniformDensity(3), q)
    vmf = densities.local_intensity(
        densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), 0.0), q)
    assert vmf == pytest.approx(uni, rel=1e-12)


def test_local_intensity_requires_normalization():
    model = densities.CustomDensity(lambda x: x[..., 0], envelope_bound=math.e, d=3)
    with pytest.raises(UnnormalizedDensity):
        densities.local_intensity(model, np.array([1.0, 0.0, 0.0]))


def test_finalize_normalization():
    model = densities.CustomDensity(lambda x: x[..., 0], envelope_bound=math.e, d=3)
    assert not model.is_normalized
    done = densities.finalize_normalization(model, 10**5, np.random.default_rng(106))
    assert done.is_normalized
    # same integrand as vMF kappa=1 up to normalization
    expected = densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), 1.0).normalization
    assert abs(done.normalization - expected) <= 4.0 * done.normalization_stderr


def test_grad_log_density_examples():
    uni = densities.UniformDensity(3)
    np.testing.assert_allclose(densities.grad_log_density(uni, [0.0, 1.0, 0.0]), np.zeros(3), atol=1e-15)
    vmf = densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), 2.0)
    q = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(densities.grad_log_density(vmf, q), [2.0, 0.0, 0.0], atol=1e-12)
    eb = densities.ExpBilinearDensity()
    np.testing.assert_allclose(densities.grad_log_density(eb, [0.0, 0.0, 1.0]), np.zeros(3), atol=1e-15)


def test_grad_log_density_finite_difference_agreement():
    # analytic gradients vs chart finite differences at 100 random queries
    rng = np.random.default_rng(107)
    models = [densities.VonMisesFisherDensity(np.array([1.0, 0.0, 0.0]), 2.0),
              densities.ExpBilinearDensity()]
    for model in models:
        as_custom = densities.CustomDensity(model.log_unnormalized, model.envelope_bound, model.d)
        for _ in range(50):
            q = sphere.normalize(rng.standard_normal(model.d))
            g_analytic = densities.grad_log_density(model, q)
            g_fd = densities.grad_log_density(as_custom, q)
            scale = max(np.linalg.norm(g_analytic), 1.0)
            assert np.linalg.norm(g_analytic - g_fd) <= 1e-5 * scale


def test_empirical_tail_examples():
    rng = np.random.default_rng(108)
    uni3 = densities.UniformDensity(3)
    q3 = np.array([1.0, 0.0, 0.0])
    assert densities.empirical_tail(uni3, q3, 2.0, 10**4, rng) == 1.0
    # d=2: F(0.01) = arccos(0.99)/pi
    uni2 = densities.UniformDensity(2)
    target = math.acos(0.99) / math.pi
    est = densities.empirical_tail(uni2, np.array([0.0, 1.0]), 0.01, 10**6, rng)
    stderr = math.sqrt(target * (1 - target) / 10**6)
    assert abs(est - target) <= 3.0 * stderr
    # d=3: exact cap mass F(t) = t/2
    est3 = densities.empirical_tail(uni3, q3, 0.01, 10**6, rng)
    stderr3 = math.sqrt(0.005 * 0.995 / 10**6)
    assert abs(est3 - 0.005) <= 3.0 * stderr3


def test_tail_ratio_converges_to_local_intensity():
    # shared 10^7 draws; the error of F(t) t^{-1/alpha} vs C(q) shrinks with t
    mu = np.array([0.0, 0.0, 1.0])
    model = densities.VonMisesFisherDensity(mu, 20.0)
    cq = densities.local_intensity(model, mu)
    toks = densities.sample_tokens(model, 10**7, np.random.default_rng(2026))
    tvals = 1.0 - toks @ mu
    errs = []
    for t in [1e-2, 1e-3, 1e-4]:
        est = np.mean(tvals <= t) / t  # alpha = 1 in d = 3
        errs.append(abs(est - cq) / cq)
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[-1] <= 0.05
