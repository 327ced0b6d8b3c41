"""Rigid and nonrigid point-cloud registration with a Gaussian-process likelihood."""

__version__ = "0.1.0"

from .covariance import MaternParams, matern, nll_gaussian
from .errors import ConfigError, GPRegError, InputOutputError, NumericalError
from .pipeline import register_nonrigid, register_rigid
from .pointcloud import BBox, PointCloud, read_cloud, write_cloud
from .transform import PenaltyConfig, RigidParams
from .windowing import FitOptions, make_grid

__all__ = [
    "BBox", "ConfigError", "FitOptions", "GPRegError", "InputOutputError", "MaternParams", "NumericalError",
    "PenaltyConfig", "PointCloud", "RigidParams", "make_grid", "matern", "nll_gaussian", "read_cloud",
    "register_nonrigid", "register_rigid", "write_cloud",
]
