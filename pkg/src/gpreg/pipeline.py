"""Rigid and nonrigid registration end to end.

Both paths share one code route: a rigid registration is a nonrigid one on
a single window, so at matched subsample size and seed the two produce
byte-identical registered clouds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud import PointCloud, bbox
from .surface import NonrigidField, build_field, rigid_field
from .windowing import FitOptions, LocalFits, WindowGrid, grid_for_clouds, local_fits


@dataclass
class Registration:
    registered: PointCloud
    field: NonrigidField
    fits: LocalFits
    grid: WindowGrid

    @property
    def estimates(self):
        return self.fits.estimates


def register_rigid(fixed: PointCloud, moving: PointCloud, N=500, opts: FitOptions | None = None,
                   seed=0) -> Registration:
    """One penalized rigid fit on ``N`` subsampled points per cloud, applied to every moving point."""
    grid = grid_for_clouds(fixed, moving, 1, 1, 0.0)
    fits = local_fits(fixed, moving, grid, N, opts, seed)
    est = fits.estimates[0]
    fld = rigid_field(est.theta_hat, moving.xy, est.theta)
    return Registration(fld.apply(moving), fld, fits, grid)


def register_nonrigid(fixed: PointCloud, moving: PointCloud, nx=4, ny=4, overlap=0.5, N=100,
                      opts: FitOptions | None = None, kind="tps", seed=0, workers=1,
                      include_cov=False, grid: WindowGrid | None = None) -> Registration:
    """Local fits over a window grid, one smooth surface per parameter, per-point application."""
    grid = grid or grid_for_clouds(fixed, moving, nx, ny, overlap)
    fits = local_fits(fixed, moving, grid, N, opts, seed, workers)
    fld = build_field(fits.estimates, moving, kind=kind, include_cov=include_cov)
    return Registration(fld.apply(moving), fld, fits, grid)


def union_box(fixed, moving):
    return bbox(fixed).union(bbox(moving))


def estimated_deformation(reg: Registration) -> np.ndarray:
    """Per-point ``(m_x, m_y, m_z, m_phi)`` implied by the fitted field."""
    return reg.field.estimated_deformation()
