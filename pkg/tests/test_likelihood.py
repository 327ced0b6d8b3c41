import numpy as np
import pytest

from gpreg.covariance import MaternParams, cross_cov_blocks, distance_matrix, matern
from gpreg.errors import ConfigError, EmptyInputError
from gpreg.likelihood import Objective, fd_gradient, fit_rigid, numerical_hessian
from gpreg.synth import simulate_gp_cloud, split_cloud
from gpreg.pointcloud import BBox
from gpreg.transform import PenaltyConfig, log_i0, transform_xy


def dense_nll(y, C):
    sign, logdet = np.linalg.slogdet(C)
    return 0.5 * (logdet + y @ np.linalg.solve(C, y) + len(y) * np.log(2 * np.pi))


@pytest.fixture
def window(rng):
    fxy = rng.uniform(0, 2, (30, 2))
    mxy = rng.uniform(0, 2, (25, 2))
    return fxy, rng.normal(size=30), mxy, rng.normal(size=25)


def test_nll_matches_dense_assembly(window):
    fxy, fz, mxy, mz = window
    obj = Objective(fxy, fz, mxy, mz, nu=1.0)
    theta = np.array([0.1, -0.05, 0.2, 0.07, np.log(1.3), np.log(0.6), np.log(0.02)])
    p = MaternParams(1.3, 0.6, 1.0, 0.02)
    J = cross_cov_blocks(fxy, mxy, lambda s: transform_xy(s, 0.07, (0.1, -0.05), obj.center), p)
    y = np.concatenate([fz, mz + 0.2])
    assert obj.nll(theta) == pytest.approx(dense_nll(y, J.matrix), rel=1e-10)


def test_objective_adds_penalty(window):
    obj = Objective(*window, penalty=PenaltyConfig(5.0, 100.0))
    theta = obj.default_init()
    theta[:4] = [0.2, 0.1, -0.3, 0.05]
    pen = 2.5 * (0.04 + 0.01 + 0.09) + log_i0(100.0) - 100.0 * np.cos(0.05)
    assert obj.value(theta) == pytest.approx(obj.nll(theta) + pen, rel=1e-12)


def test_caches_do_not_change_values(window):
    obj = Objective(*window)
    t1 = obj.default_init()
    t2 = t1.copy()
    t2[0] = 0.3
    a = obj.value(t1)
    b = obj.value(t2)
    fresh = Objective(*window)
    assert fresh.value(t2) == b and fresh.value(t1) == a


def test_point_cap_and_empty_input(window):
    fxy, fz, mxy, mz = window
    with pytest.raises(ConfigError):
        Objective(fxy, fz, mxy, mz, max_points=40)
    with pytest.raises(EmptyInputError):
        Objective(fxy[:0], fz[:0], mxy, mz)


def richardson_ratio(f, grad, x, h):
    e1 = np.linalg.norm(fd_gradient(f, x, steps=h) - grad(x))
    e2 = np.linalg.norm(fd_gradient(f, x, steps=h / 2) - grad(x))
    return e1 / e2


def test_central_difference_is_second_order():
    def f(x):
        return np.sin(x[0]) * np.exp(0.5 * x[1]) + x[0] ** 3

    def g(x):
        return np.array([np.cos(x[0]) * np.exp(0.5 * x[1]) + 3 * x[0] ** 2, 0.5 * np.sin(x[0]) * np.exp(0.5 * x[1])])

    assert 3.5 <= richardson_ratio(f, g, np.array([0.7, -0.3]), 1e-2) <= 4.5


def test_hessian_of_quadratic_is_exact():
    A = np.array([[3.0, 1.0, 0.5], [1.0, 2.0, -0.2], [0.5, -0.2, 1.5]])
    H = numerical_hessian(lambda x: 0.5 * x @ A @ x + x.sum(), np.array([0.3, -0.1, 0.2]))
    assert np.allclose(H, A, atol=1e-6)


def test_hessian_goes_one_sided_at_a_bound():
    A = np.diag([2.0, 4.0])
    with pytest.warns(RuntimeWarning):
        H = numerical_hessian(lambda x: 0.5 * x @ A @ x, np.array([1.0, 0.0]), lower=[-1, -1], upper=[1, 1])
    assert np.allclose(H, A, atol=1e-3)


def test_fit_recovers_a_known_shift():
    p = MaternParams(1.0, 1.0, 1.0, 1e-4)
    cloud = simulate_gp_cloud(500, BBox(0, 3, 0, 3), p, seed=5)
    fixed, moving = split_cloud(cloud, seed=5)
    fixed = fixed.crop(BBox(0.5, 2.5, 0.5, 2.5))
    moving = moving.crop(BBox(0.5, 2.5, 0.5, 2.5))
    shift = np.array([0.15, -0.1])
    # moving coordinates are recorded offset by -shift, so r = +shift realigns them
    obj = Objective(fixed.xy, fixed.z, moving.xy - shift, moving.z - 0.2, penalty=PenaltyConfig(0.0, 0.0))
    res = fit_rigid(obj, n_starts=1)
    assert np.allclose(res.theta[:2], shift, atol=0.03)
    assert res.theta[2] == pytest.approx(0.2, abs=0.05)
    assert abs(res.theta[3]) < 0.03
    assert res.param_cov.shape == (7, 7)
    assert np.all(np.linalg.eigvalsh(res.param_cov) > 0)


def test_fixed_entries_stay_put(window):
    free = np.array([True, False, False, False, True, True, True])
    obj = Objective(*window, free=free)
    res = fit_rigid(obj, n_starts=1)
    assert np.all(res.theta[1:4] == 0.0)
    assert res.free_names == ["r_x", "log_sigma2", "log_a", "log_tau2"]
    assert res.param_cov.shape == (4, 4)
