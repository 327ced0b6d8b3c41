import json

import numpy as np
import pytest
from scipy.interpolate import RBFInterpolator

from gpreg.covariance import distance_matrix, matern_correlation
from gpreg.errors import ConfigError, FieldError, RankDeficiencyError
from gpreg.surface import (ConstantSurface, GPSurface, NonrigidField, build_field, conditional_sim, fit_gp_surface,
                           fit_surface, fit_tps, rigid_field, surface_from_json, tps_kernel)
from gpreg.transform import RigidParams, apply_rigid
from gpreg.windowing import LocalEstimate


@pytest.fixture
def knots(rng):
    g = np.linspace(0.5, 5.5, 4)
    gx, gy = np.meshgrid(g, g)
    X = np.column_stack([gx.ravel(), gy.ravel()])
    return X, np.sin(X[:, 0]) + 0.3 * X[:, 1] + 0.05 * rng.normal(size=16)


def test_tps_kernel_values():
    assert np.allclose(tps_kernel([0.0, 1.0, np.e]), [0.0, 0.0, np.e ** 2])


def test_interpolating_tps_matches_scipy(knots, rng):
    X, y = knots
    s = fit_tps(X, y, smoothing=0.0)
    q = rng.uniform(0, 6, (50, 2))
    ref = RBFInterpolator(X, y, kernel="thin_plate_spline", degree=1)(q)
    assert np.allclose(s.predict(q), ref, atol=1e-9)
    assert np.allclose(s.predict(X), y, atol=1e-9)


def test_tps_reproduces_affine_data_at_any_smoothing(knots, rng):
    X, _ = knots
    y = 0.2 - 0.5 * X[:, 0] + 1.5 * X[:, 1]
    q = rng.uniform(0, 6, (20, 2))
    for lam in (None, 1e-3, 10.0):
        s = fit_tps(X, y, smoothing=lam)
        assert np.allclose(s.predict(q), 0.2 - 0.5 * q[:, 0] + 1.5 * q[:, 1], atol=1e-8)


def test_gcv_smooths_noise(knots):
    X, y = knots
    s = fit_tps(X, y)
    assert s.smoothing > 0 and np.isfinite(s.gcv)
    assert np.max(np.abs(s.predict(X) - y)) > 1e-6


def test_tps_rejects_collinear_knots():
    X = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(RankDeficiencyError):
        fit_tps(X, np.arange(6.0))


def gls_kriging(X, v, nv, sigma2, a, nu, q):
    """Dense plug-in kriging with a generalized-least-squares constant mean."""
    A = sigma2 * matern_correlation(distance_matrix(X), a, nu) + np.diag(nv)
    Ai = np.linalg.inv(A)
    one = np.ones(len(v))
    beta = one @ Ai @ v / (one @ Ai @ one)
    k = sigma2 * matern_correlation(distance_matrix(q, X), a, nu)
    mean = beta + k @ Ai @ (v - beta)
    Kqq = sigma2 * matern_correlation(distance_matrix(q), a, nu)
    return mean, Kqq - k @ Ai @ k.T


def test_gp_prediction_matches_dense_formula(knots, rng):
    X, y = knots
    nv = rng.uniform(1e-3, 5e-3, len(y))
    s = GPSurface(X, y, nv, 0.8, 2.0, 2.0)
    q = rng.uniform(0, 6, (15, 2))
    mean, cov = gls_kriging(X, y, nv, 0.8, 2.0, 2.0, q)
    assert np.allclose(s.predict(q), mean, atol=1e-10)
    assert np.allclose(s.posterior_cov(q), cov, atol=1e-10)
    assert np.allclose(s.variance(q), np.diag(cov), atol=1e-10)


def test_gp_fit_is_a_likelihood_maximum(knots):
    X, y = knots
    s = fit_gp_surface(X, y, np.full(16, 1e-3))
    best = s.log_likelihood()
    for f2, fa in ((1.2, 1.0), (0.8, 1.0), (1.0, 1.2), (1.0, 0.8)):
        other = GPSurface(X, y, s.noise_vars, s.sigma2 * f2, s.a * fa, s.nu)
        assert other.log_likelihood() <= best + 1e-6


def test_simulator_mean_is_linear_in_knot_values(knots, rng):
    X, y = knots
    s = GPSurface(X, y, np.full(16, 1e-3), 0.8, 2.0)
    q = rng.uniform(0, 6, (30, 2))
    sim = s.simulator(q)
    v2 = y + rng.normal(size=16)
    assert np.allclose(sim.mean(v2), s.with_values(v2).predict(q), atol=1e-10)


def test_conditional_draws_have_posterior_moments(knots):
    X, y = knots
    s = GPSurface(X, y, np.full(16, 1e-2), 0.8, 1.0)
    q = np.array([[1.0, 1.0], [3.0, 2.7], [5.9, 0.1]])
    sim = s.simulator(q)
    rng = np.random.default_rng(0)
    draws = np.array([sim.draw(rng) for _ in range(20000)])
    sd = np.sqrt(s.variance(q))
    # mean within 5 standard errors, variance within 5%
    assert np.all(np.abs(draws.mean(0) - s.predict(q)) < 5 * sd / np.sqrt(20000))
    assert np.allclose(draws.var(0), sd ** 2, rtol=0.05)


def test_lattice_draws_track_exact_ones(knots, rng):
    X, y = knots
    s = GPSurface(X, y, np.full(16, 1e-2), 0.8, 1.0)
    q = rng.uniform(0, 6, (400, 2))
    sim = s.simulator(q, max_exact=100)
    assert not sim.exact
    draws = np.array([sim.draw(rng) for _ in range(400)])
    assert np.allclose(draws.mean(0), s.predict(q), atol=0.15)
    assert np.allclose(draws.std(0), np.sqrt(s.variance(q)), atol=0.1)


def test_conditional_sim_requires_gp(knots):
    X, y = knots
    with pytest.raises(ConfigError):
        conditional_sim(fit_tps(X, y), X, seed=0)


@pytest.mark.parametrize("kind", ["tps", "gp"])
def test_surface_json_round_trip(kind, knots, rng):
    X, y = knots
    s = fit_surface(kind, X, y, np.full(16, 1e-3))
    back = surface_from_json(json.loads(json.dumps(s.to_json())))
    q = rng.uniform(0, 6, (10, 2))
    assert np.allclose(back.predict(q), s.predict(q), rtol=1e-12, atol=1e-12)


def test_constant_values_give_constant_surface(knots):
    X, _ = knots
    s = fit_surface("gp", X, np.full(16, 0.3), np.full(16, 1e-3))
    assert isinstance(s, ConstantSurface) and np.all(s.predict(X) == 0.3)


def test_field_from_displacement_round_trip(rng):
    s = rng.uniform(0, 6, (20, 2))
    t = rng.normal(scale=0.1, size=(20, 2))
    phi = rng.normal(scale=0.05, size=20)
    f = NonrigidField.from_displacement(s, t[:, 0], t[:, 1], np.zeros(20), phi)
    assert np.allclose(f.displacement(), t, atol=1e-12)
    assert np.allclose(f.estimated_deformation()[:, :2], -t, atol=1e-12)


def test_rigid_field_equals_rigid_map(rng):
    p = RigidParams(0.1, -0.2, 0.3, 0.05, center=(2.0, 1.0))
    s = rng.uniform(0, 6, (30, 2))
    f = rigid_field(p, s)
    t, _ = apply_rigid(s, 0.0, p)
    assert np.allclose(f.transformed_xy(), t, atol=1e-12)
    assert np.all(f.mu_z == 0.3)


def fake_estimate(k, center, shift):
    theta = np.array([shift[0], shift[1], 0.0, 0.0, 0.0, 0.0, -4.0])
    p = RigidParams(shift[0], shift[1], 0.0, 0.0, center=tuple(center))
    return LocalEstimate(k, np.asarray(center, float), theta, p, np.eye(7) * 1e-4, True, (50, 50))


def test_field_needs_enough_windows():
    ests = [fake_estimate(k, (k, k), (0.1, 0.0)) for k in range(3)]
    with pytest.raises(FieldError):
        build_field(ests, np.zeros((4, 2)))


def test_field_from_uniform_shift_is_that_shift():
    g = np.linspace(1, 5, 3)
    centers = [(x, y) for y in g for x in g]
    ests = [fake_estimate(k, c, (0.1, -0.05)) for k, c in enumerate(centers)]
    q = np.random.default_rng(1).uniform(0, 6, (25, 2))
    for kind in ("tps", "gp"):
        f = build_field(ests, q, kind=kind)
        assert np.allclose(f.displacement(), [0.1, -0.05], atol=1e-9)
