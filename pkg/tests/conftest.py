import numpy as np
import pytest

from gpreg.covariance import MaternParams
from gpreg.pointcloud import BBox, PointCloud
from gpreg.synth import simulate_gp_cloud, split_cloud


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def terrain():
    return MaternParams(sigma2=2.5, a=3.0, nu=1.0, tau2=1e-4)


@pytest.fixture(scope="session")
def small_pair(terrain):
    """A 1,600-point simulated surface on [0, 6]^2 split into halves."""
    cloud = simulate_gp_cloud(1600, BBox(0, 6, 0, 6), terrain, seed=3)
    return split_cloud(cloud, seed=3)


def uniform_cloud(n, seed=0, box=(0.0, 6.0, 0.0, 6.0), role="fixed"):
    r = np.random.default_rng(seed)
    xy = np.column_stack([r.uniform(box[0], box[1], n), r.uniform(box[2], box[3], n)])
    return PointCloud.from_arrays(xy, r.normal(size=n), role=role)
