import numpy as np
import pytest

from gpreg.covariance import MaternParams, distance_matrix, matern
from gpreg.errors import ConfigError
from gpreg.kriging import KrigingConfig, LocalKriger, krige, knn
from gpreg.surface import ConstantSurface

from conftest import uniform_cloud

P = MaternParams(2.5, 3.0, 1.0, 1e-2)


def global_kriging(xy, z, q, p, center=True):
    m = z.mean() if center else 0.0
    C = matern(distance_matrix(xy), p) + p.tau2 * np.eye(len(z))
    c = matern(distance_matrix(q, xy), p)
    Ci = np.linalg.inv(C)
    mean = m + c @ Ci @ (z - m)
    var = p.sigma2 + p.tau2 - np.einsum("ij,jk,ik->i", c, Ci, c)
    return mean, var


@pytest.mark.parametrize("center", [True, False])
def test_full_neighborhood_equals_global_kriging(center, rng):
    cloud = uniform_cloud(30, seed=7)
    q = rng.uniform(0, 6, (8, 2))
    kr = LocalKriger.from_cloud(cloud, KrigingConfig(k=30, params=P, center_mean=center))
    mean, var = kr.predict(q)
    gm, gv = global_kriging(cloud.xy, cloud.z, q, P, center)
    assert np.allclose(mean, gm, rtol=1e-8, atol=1e-10)
    assert np.allclose(var, gv, rtol=1e-8, atol=1e-10)


def test_knn_matches_brute_force(rng):
    cloud = uniform_cloud(200, seed=8)
    for q in rng.uniform(0, 6, (10, 2)):
        d = np.linalg.norm(cloud.xy - q, axis=1)
        assert np.array_equal(knn(cloud, q, 10), np.lexsort((np.arange(200), d))[:10])


def test_knn_breaks_ties_by_index():
    xy = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [3.0, 3.0]])
    assert list(knn(xy, [0.0, 0.0], 2)) == [0, 1]
    assert list(knn(xy, [0.0, 0.0], 10)) == [0, 1, 2, 3, 4]


def test_prediction_at_a_data_point_without_nugget():
    cloud = uniform_cloud(20, seed=9)
    cfg = KrigingConfig(k=20, params=MaternParams(1.0, 1.0, 1.0, 0.0))
    pred = krige(cloud, cloud.xy[3], cfg)
    assert pred.mean == pytest.approx(cloud.z[3], abs=1e-8)
    assert pred.variance == pytest.approx(0.0, abs=1e-8)


def test_constant_surfaces_equal_stationary_model(rng):
    cloud = uniform_cloud(60, seed=10)
    surf = {"log_sigma2": ConstantSurface(np.log(P.sigma2)), "log_a": ConstantSurface(np.log(P.a)),
            "log_tau2": ConstantSurface(np.log(P.tau2))}
    q = rng.uniform(0, 6, (5, 2))
    a = LocalKriger.from_cloud(cloud, KrigingConfig(k=15, params=P)).predict(q)
    b = LocalKriger.from_cloud(cloud, KrigingConfig(k=15, surfaces=surf)).predict(q)
    assert np.allclose(a, b, rtol=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError):
        KrigingConfig(k=10)
    with pytest.raises(ConfigError):
        KrigingConfig(k=1, params=P)
    with pytest.raises(ConfigError):
        KrigingConfig(params=P, surfaces={"log_a": ConstantSurface(0.0)})
