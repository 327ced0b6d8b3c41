import numpy as np
import pytest

from gpreg.pipeline import register_nonrigid, register_rigid
from gpreg.pointcloud import PointCloud
from gpreg.windowing import FitOptions

OPTS = FitOptions(n_starts=1)


def shifted(moving, dx, dy, dz):
    return PointCloud.from_arrays(moving.xy + [dx, dy], moving.z + dz, role="moving")


def test_rigid_recovers_a_known_shift(small_pair):
    fixed, moving = small_pair
    reg = register_rigid(fixed, shifted(moving, 0.2, -0.1, 0.3), N=300, opts=OPTS)
    err = reg.registered.xyz - moving.xyz
    assert np.max(np.abs(err[:, :2])) < 0.05
    assert np.max(np.abs(err[:, 2])) < 0.05


def test_single_window_nonrigid_equals_rigid(small_pair):
    fixed, moving = small_pair
    a = register_rigid(fixed, moving, N=150, opts=OPTS, seed=3)
    b = register_nonrigid(fixed, moving, 1, 1, 0.0, 150, OPTS, seed=3)
    assert np.array_equal(a.registered.xyz, b.registered.xyz)


@pytest.mark.parametrize("kind", ["tps", "gp"])
def test_nonrigid_shift_is_smooth_and_close(small_pair, kind):
    fixed, moving = small_pair
    reg = register_nonrigid(fixed, shifted(moving, 0.1, 0.0, 0.0), 3, 3, 0.5, 80, OPTS, kind=kind)
    d = reg.field.displacement()
    assert np.allclose(d[:, 0], -0.1, atol=0.05) and np.allclose(d[:, 1], 0.0, atol=0.05)
    assert set(reg.field.surfaces) == {"t_x", "t_y", "mu_z", "phi"}
