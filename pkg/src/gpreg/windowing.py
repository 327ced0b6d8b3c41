"""Overlapping window grid, per-window subsampling and local rigid fits."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWindowError, EmptyFieldError
from .likelihood import Objective, fit_rigid
from .pointcloud import BBox, PointCloud, bbox
from .transform import PARAM_NAMES, PHI_BOUNDS, Bounds, PenaltyConfig, RigidParams

log = logging.getLogger(__name__)

ROLE_CODES = {"fixed": 0, "moving": 1}
MIN_WINDOW_POINTS = 10


@dataclass(frozen=True, eq=False)
class WindowGrid:
    centers: np.ndarray
    width: float
    height: float
    nx: int
    ny: int
    overlap: float
    box: BBox

    def __len__(self):
        return len(self.centers)

    @property
    def window_side(self) -> tuple[float, float]:
        return self.width, self.height

    def window_box(self, k) -> tuple[float, float, float, float]:
        cx, cy = self.centers[k]
        return cx - self.width / 2, cx + self.width / 2, cy - self.height / 2, cy + self.height / 2

    def index(self, i, j) -> int:
        """Window id for column ``i`` (x) and row ``j`` (y)."""
        return j * self.nx + i


def make_grid(box: BBox, nx: int, ny: int, overlap: float = 0.5) -> WindowGrid:
    """Windows that exactly tile ``box`` with fractional ``overlap`` between neighbors.

    Per axis the side is ``L / (1 + (n - 1)(1 - overlap))`` and centers sit at
    ``min + w/2 + i * w (1 - overlap)``.
    """
    if nx < 1 or ny < 1:
        raise DegenerateWindowError("grid needs at least one window per axis")
    if not 0.0 <= overlap <= 0.9:
        raise DegenerateWindowError(f"overlap must lie in [0, 0.9], got {overlap}")
    wx = box.width / (1.0 + (nx - 1) * (1.0 - overlap))
    wy = box.height / (1.0 + (ny - 1) * (1.0 - overlap))
    if not (wx > 0 and wy > 0) or not np.isfinite(wx + wy):
        raise DegenerateWindowError("window side collapsed to zero")
    cx = box.x_min + wx / 2 + np.arange(nx) * wx * (1.0 - overlap)
    cy = box.y_min + wy / 2 + np.arange(ny) * wy * (1.0 - overlap)
    gx, gy = np.meshgrid(cx, cy)
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    return WindowGrid(centers, float(wx), float(wy), nx, ny, float(overlap), box)


def grid_for_clouds(fixed: PointCloud, moving: PointCloud, nx, ny, overlap=0.5) -> WindowGrid:
    """Grid over the union bounding box of both clouds."""
    return make_grid(bbox(fixed).union(bbox(moving)), nx, ny, overlap)


def partition(cloud: PointCloud, grid: WindowGrid) -> list[np.ndarray]:
    """Indices of points inside each window (half-open, closed on the last row/column)."""
    x, y = cloud.xy[:, 0], cloud.xy[:, 1]
    out = []
    for k in range(len(grid)):
        i, j = k % grid.nx, k // grid.nx
        x0, x1, y0, y1 = grid.window_box(k)
        inx = (x >= x0) & ((x <= x1) if i == grid.nx - 1 else (x < x1))
        iny = (y >= y0) & ((y <= y1) if j == grid.ny - 1 else (y < y1))
        out.append(np.flatnonzero(inx & iny))
    return out


def window_rng(seed, k, role) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(k), ROLE_CODES.get(role, 2)]))


def subsample(indices, N, seed, k=0, role="fixed") -> np.ndarray:
    """Uniform sample without replacement of ``min(N, len(indices))`` indices, sorted."""
    indices = np.asarray(indices, dtype=np.intp)
    if N < 1:
        raise ValueError("N must be >= 1")
    if len(indices) <= N:
        return indices.copy()
    pick = window_rng(seed, k, role).choice(len(indices), size=N, replace=False)
    return np.sort(indices[pick])


@dataclass
class LocalEstimate:
    k: int
    center: np.ndarray
    theta: np.ndarray
    theta_hat: RigidParams
    param_cov: np.ndarray
    converged: bool
    n_used: tuple
    nll: float = np.nan
    degenerate: bool = False
    z_offset: float = 0.0
    bounds: Bounds | None = None

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.param_cov), 0.0, None))

    def displacement_at(self, s) -> np.ndarray:
        """Planar shift ``T(s) - s`` of this window's rigid map."""
        p = self.theta_hat
        s = np.asarray(s, dtype=np.float64)
        c = np.asarray(p.center)
        return (s - c) @ p.R.T + c + p.r - s


@dataclass
class LocalFits:
    estimates: list
    skipped: list = field(default_factory=list)
    grid: WindowGrid | None = None

    def __iter__(self):
        return iter(self.estimates)

    def __len__(self):
        return len(self.estimates)


@dataclass(frozen=True)
class FitOptions:
    """Settings shared by every window fit."""

    penalty: PenaltyConfig = PenaltyConfig()
    translation_bound: float = 1.0
    phi_bounds: tuple = PHI_BOUNDS
    free: tuple = PARAM_NAMES
    fixed_values: tuple = ()
    nu: float = 1.0
    n_starts: int = 3
    center_z: bool = True
    bounds: Bounds | None = None
    min_points: int = MIN_WINDOW_POINTS

    def free_mask(self) -> np.ndarray:
        return np.array([n in self.free for n in PARAM_NAMES])


def build_objective(fxy, fz, mxy, mz, opts: FitOptions) -> tuple[Objective, float]:
    """Objective for one window; elevations are shifted by the fixed-subsample mean when ``center_z``."""
    offset = float(np.mean(fz)) if opts.center_z else 0.0
    obj = Objective(fxy, fz - offset, mxy, mz - offset, penalty=opts.penalty, nu=opts.nu,
                    free=opts.free_mask())
    if opts.bounds is None:
        obj.bounds = Bounds.default(opts.translation_bound, obj.var, obj.diag, opts.phi_bounds)
    else:
        obj.bounds = opts.bounds
    base = obj.default_init()
    for name, value in dict(opts.fixed_values).items():
        base[PARAM_NAMES.index(name)] = value
    obj.base = obj.bounds.clip(base)
    return obj, offset


def _fit_window(task):
    k, center, fxy, fz, mxy, mz, opts, seed = task
    obj, offset = build_objective(fxy, fz, mxy, mz, opts)
    start_seed = np.random.SeedSequence([int(seed), int(k), 7])
    res = fit_rigid(obj, n_starts=opts.n_starts, seed=start_seed)
    return LocalEstimate(
        k=k,
        center=np.asarray(center, dtype=np.float64),
        theta=res.theta,
        theta_hat=res.theta_hat,
        param_cov=res.full_cov(),
        converged=res.converged,
        n_used=(len(fz), len(mz)),
        nll=res.nll,
        degenerate=res.degenerate,
        z_offset=offset,
        bounds=obj.bounds,
    )


def window_tasks(fixed, moving, grid, N, seed, opts: FitOptions):
    parts_u = partition(fixed, grid)
    parts_v = partition(moving, grid)
    tasks, skipped = [], []
    for k in range(len(grid)):
        iu = subsample(parts_u[k], N, seed, k, "fixed")
        iv = subsample(parts_v[k], N, seed, k, "moving")
        if len(iu) < opts.min_points or len(iv) < opts.min_points:
            skipped.append((k, f"too few points (fixed {len(iu)}, moving {len(iv)})"))
            continue
        tasks.append((k, grid.centers[k], fixed.xy[iu], fixed.z[iu], moving.xy[iv], moving.z[iv], opts, seed))
    return tasks, skipped


def local_fits(fixed: PointCloud, moving: PointCloud, grid: WindowGrid, N: int, opts: FitOptions | None = None,
               seed: int = 0, workers: int = 1) -> LocalFits:
    """Fit the penalized rigid model independently in every window.

    Results come back ordered by window id whatever the worker count; the
    per-window random streams depend only on ``(seed, k, role)``.
    """
    opts = opts or FitOptions()
    tasks, skipped = window_tasks(fixed, moving, grid, N, seed, opts)
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_fit_window, tasks))
    else:
        results = [_fit_window(t) for t in tasks]
    estimates = []
    for est in results:
        if not np.all(np.isfinite(est.theta)):
            skipped.append((est.k, "non-finite estimate"))
            continue
        estimates.append(est)
    skipped.sort()
    for k, why in skipped:
        log.info("window %d skipped: %s", k, why)
    if not estimates:
        raise EmptyFieldError("every window was skipped")
    return LocalFits(estimates, skipped, grid)


def estimates_table(fits: LocalFits) -> list[dict]:
    """Rows for ``window_estimates.csv``."""
    rows = []
    for est in fits.estimates:
        se = est.std_errors
        row = {"k": est.k, "g_x": est.center[0], "g_y": est.center[1],
               "c_x": est.theta_hat.center[0], "c_y": est.theta_hat.center[1]}
        for i, name in enumerate(PARAM_NAMES):
            row[name] = est.theta[i]
        for i, name in enumerate(PARAM_NAMES):
            row["se_" + name] = se[i]
        row["converged"] = int(est.converged)
        row["n_fixed"], row["n_moving"] = est.n_used
        rows.append(row)
    return rows

