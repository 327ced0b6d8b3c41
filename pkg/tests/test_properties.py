"""Property checks over randomly drawn inputs."""

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.distance import pdist

from gpreg.covariance import MaternParams, distance_matrix, matern, nll_gaussian
from gpreg.evaluation import crps_ensemble, nrmse
from gpreg.likelihood import Objective
from gpreg.surface import GPSurface
from gpreg.transform import RigidParams, apply_rigid, transform_xy

finite = st.floats(-50, 50, allow_nan=False)
coords = arrays(np.float64, st.tuples(st.integers(2, 25), st.just(2)), elements=finite)


@given(coords, st.floats(-3.2, 3.2), finite, finite)
def test_rigid_map_is_an_isometry(xy, phi, rx, ry):
    t, _ = apply_rigid(xy, 0.0, RigidParams(rx, ry, 0.0, phi, center=(1.0, 2.0)))
    assert np.max(np.abs(pdist(t) - pdist(xy))) < 1e-10


@given(coords, st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.7, 0.7))
def test_inverse_map_is_identity(xy, rx, ry, mz, phi):
    p = RigidParams(rx, ry, mz, phi, center=(0.5, -0.5))
    t, y = apply_rigid(xy, np.zeros(len(xy)), p)
    back, yb = apply_rigid(t, y, p.inverse())
    assert np.max(np.abs(back - xy)) < 1e-10 and np.max(np.abs(yb)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.floats(0.1, 10), st.floats(0.05, 5), st.sampled_from([0.5, 1.0, 1.5, 2.0, 2.5, 0.7]),
       st.integers(0, 2 ** 31))
def test_matern_covariance_factorizes_with_jitter(n, sigma2, a, nu, seed):
    xy = np.random.default_rng(seed).uniform(0, 6, (n, 2))
    p = MaternParams(sigma2, a, nu, 1e-8 * sigma2)
    C = matern(distance_matrix(xy), p) + p.tau2 * np.eye(n)
    assert np.allclose(C, C.T, rtol=1e-10, atol=0)
    np.linalg.cholesky(C)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.3, 0.3))
def test_deregistration_leaves_likelihood_unchanged(seed, rx, ry, phi):
    rng = np.random.default_rng(seed)
    fxy, mxy = rng.uniform(0, 3, (20, 2)), rng.uniform(0, 3, (15, 2))
    fz, mz = rng.normal(size=20), rng.normal(size=15)
    aligned = Objective(fxy, fz, mxy, mz)
    c = aligned.center
    # move the moving cloud by the inverse map; the compensating parameters restore it
    moved = transform_xy(mxy - c, -phi, 0.0) + c - transform_xy(np.array([rx, ry]), -phi, 0.0)
    obj = Objective(fxy, fz, moved, mz, center=c)
    theta0 = aligned.default_init()
    theta = theta0.copy()
    theta[[0, 1, 3]] = rx, ry, phi
    assert np.allclose(obj.transformed_moving(theta), mxy, atol=1e-12)
    assert abs(obj.nll(theta) - aligned.nll(theta0)) < 1e-6


@given(arrays(np.float64, (3, 5), elements=finite), arrays(np.float64, 3, elements=finite))
def test_crps_is_non_negative_and_permutation_invariant(X, y):
    c = crps_ensemble(X, y)
    assert c >= 0
    assert np.isclose(crps_ensemble(X[:, ::-1], y), c, rtol=1e-12, atol=1e-12)


@given(st.floats(0.01, 100), st.integers(0, 2 ** 31))
def test_nrmse_scale_covariance(c, seed):
    rng = np.random.default_rng(seed)
    T, E = rng.normal(size=(10, 4)), rng.normal(size=(10, 4))
    a, b = nrmse(T, E, ("x", "z")), nrmse(c * T, c * E, ("x", "z"))
    assert all(np.isclose(a[k], b[k], rtol=1e-10) for k in a)


@settings(deadline=None)
@given(st.integers(0, 2 ** 31))
def test_gp_prediction_is_linear_in_values(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 6, (8, 2))
    s = GPSurface(X, np.zeros(8), np.full(8, 1e-3), 1.0, 2.0)
    v1, v2 = rng.normal(size=8), rng.normal(size=8)
    q = rng.uniform(0, 6, (5, 2))
    lhs = s.with_values(v1 + v2).predict(q)
    rhs = s.with_values(v1).predict(q) + s.with_values(v2).predict(q)
    assert np.allclose(lhs, rhs, atol=1e-10)


@settings(deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 31))
def test_nll_agrees_with_dense_inverse(n, seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 4, (n, 2))
    C = matern(distance_matrix(xy), MaternParams(1.0, 1.0, 1.0)) + 0.1 * np.eye(n)
    y = rng.normal(size=n)
    dense = 0.5 * (np.linalg.slogdet(C)[1] + y @ np.linalg.inv(C) @ y + n * np.log(2 * np.pi))
    assert np.isclose(nll_gaussian(y, 0.0, C), dense, rtol=1e-8)
