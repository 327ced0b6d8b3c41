import numpy as np
import pytest
from scipy.stats import norm

from gpreg.errors import ConfigError, UndefinedMetricError
from gpreg.evaluation import crossval, crps_ensemble, holdout_split, nrmse, rmse
from gpreg.kriging import KrigingConfig, LocalKriger

from conftest import uniform_cloud


def test_rmse_by_hand():
    assert rmse([0, 0, 0, 0], [1, -1, 1, -1]) == 1.0


def test_nrmse_two_line_oracle(rng):
    T = rng.normal(size=(40, 4))
    E = T + 0.1 * rng.normal(size=(40, 4))
    applied = ("x", "z")
    mbar = np.mean(np.abs(T[:, [0, 2]]))
    expect = np.sqrt(np.mean((T - E) ** 2, axis=0)) / mbar
    got = nrmse(T, E, applied)
    assert np.allclose([got[c] for c in "x y z phi".split()], expect, rtol=1e-12)


def test_nrmse_is_scale_covariant(rng):
    T = rng.normal(size=(10, 4))
    E = rng.normal(size=(10, 4))
    a = nrmse(T, E, ("x",))
    b = nrmse(3.7 * T, 3.7 * E, ("x",))
    assert a == pytest.approx(b, rel=1e-12)


def test_nrmse_undefined_without_deformation():
    with pytest.raises(UndefinedMetricError):
        nrmse(np.zeros((3, 4)), np.ones((3, 4)), ("x",))
    with pytest.raises(UndefinedMetricError):
        nrmse(np.ones((3, 4)), np.ones((3, 4)), ())


def test_crps_hand_case():
    assert crps_ensemble([[0.0, 2.0]], [1.0]) == 0.5
    # fair form: 1 - 0.5 * (2 * 2) / 2
    assert crps_ensemble([[0.0, 2.0]], [1.0], fair=True) == 0.0


def test_crps_matches_pairwise_definition(rng):
    X = rng.normal(size=(5, 7))
    y = rng.normal(size=5)
    direct = np.mean(np.abs(X - y[:, None]).mean(1) - 0.5 * np.abs(X[:, :, None] - X[:, None, :]).mean((1, 2)))
    assert crps_ensemble(X, y) == pytest.approx(direct, rel=1e-12)


def test_crps_gaussian_closed_form():
    # CRPS(N(0, 1), 0) = 2 phi(0) - 1 / sqrt(pi)
    exact = 2 * norm.pdf(0) - 1 / np.sqrt(np.pi)
    assert exact == pytest.approx(0.2337, abs=1e-4)
    rng = np.random.default_rng(0)
    vals = [crps_ensemble(rng.normal(size=(1, 10000)), [0.0]) for _ in range(50)]
    band = 3 * np.std(vals) / np.sqrt(len(vals))
    # the all-pairs estimator is biased low by exact / n
    assert abs(np.mean(vals) - exact * (1 - 1 / 10000)) < band + 1e-12


def test_crps_properties(rng):
    X = rng.normal(size=(4, 6))
    y = rng.normal(size=4)
    assert crps_ensemble(X, y) >= 0
    assert crps_ensemble(X[:, rng.permutation(6)], y) == pytest.approx(crps_ensemble(X, y), rel=1e-14)
    assert crps_ensemble(np.repeat(y[:, None], 6, axis=1), y) == 0.0


def test_holdout_split():
    cloud = uniform_cloud(500)
    train, test = holdout_split(cloud, 0.02, seed=1)
    assert len(test) == 10 and len(train) == 490
    assert np.array_equal(test, holdout_split(cloud, 0.02, seed=1)[1])
    with pytest.raises(ConfigError):
        holdout_split(cloud, 0.0, seed=1)
    with pytest.raises(ConfigError):
        holdout_split(cloud, 0.0001, seed=1)


def test_crossval_report_echoes_config(small_pair):
    fixed, moving = small_pair
    rep = crossval(fixed, moving, holdout_frac=0.01, method="rigid", n_sim=5, seed=0, N=100, k=50)
    assert rep.n_test == 8 and rep.n_simulations == 5
    assert rep.config["method"] == "rigid" and rep.config["knn"] == 50
    assert rep.ensemble.shape == (8, 5)
    assert np.isfinite(rep.rmse) and rep.crps >= 0


def test_nonrigid_crossval_without_deformation_matches_no_registration(small_pair, terrain):
    fixed, moving = small_pair
    rep = crossval(fixed, moving, holdout_frac=0.02, method="nonrigid", n_sim=2, seed=1, N=60, k=50,
                   nx=3, ny=3, kind="gp")
    # oracle: krige the already-aligned pair with the true covariance
    train, test = holdout_split(fixed, 0.02, seed=1)
    kr = LocalKriger(np.vstack([train.xy, moving.xy]), np.concatenate([train.z, moving.z]),
                     KrigingConfig(k=50, params=terrain))
    oracle = rmse(fixed.z[test], kr.predict(fixed.xy[test])[0])
    assert rep.rmse <= 1.1 * oracle
