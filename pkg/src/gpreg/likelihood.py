"""Penalized Gaussian-process likelihood for rigid registration and its minimization.

The stacked response ``Y = (Y_fixed, Y_moving)`` is modeled as a zero-mean
Matérn process observed at the fixed locations and at the *transformed*
moving locations, with mean ``-mu_z`` on the moving block (so that
``Y_moving + mu_z`` lives in the fixed frame) and nugget ``tau2``. The
objective is that negative log-likelihood plus :func:`gpreg.transform.penalty`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .covariance import LOG_2PI, cholesky_lower, distance_matrix, matern_correlation
from .errors import ConfigError, EmptyInputError, IndefiniteCovarianceError, NumericalError
from .transform import (
    N_PARAMS,
    PARAM_NAMES,
    Bounds,
    PenaltyConfig,
    RigidParams,
    penalty_value,
    rotation_matrix,
    unpack,
)

log = logging.getLogger(__name__)

BARRIER = 1e10
DEFAULT_MAX_POINTS = 1000


class Objective:
    """``f(theta) = NLL(Y | theta) + penalty(theta)`` over a fixed and a moving subsample.

    ``theta`` is the full 7-vector in optimizer coordinates. ``free`` selects
    which entries the optimizer may move; the others stay at ``base``.
    Covariance blocks that do not depend on the perturbed entries are cached,
    so finite-difference sweeps over transform parameters avoid recomputing
    the within-cloud Matérn blocks.
    """

    def __init__(self, fixed_xy, fixed_z, moving_xy, moving_z, penalty=None, bounds=None,
                 nu=1.0, center=None, free=None, base=None, max_points=DEFAULT_MAX_POINTS):
        self.fixed_xy = np.ascontiguousarray(fixed_xy, dtype=np.float64).reshape(-1, 2)
        self.fixed_z = np.ascontiguousarray(fixed_z, dtype=np.float64).reshape(-1)
        self.moving_xy = np.ascontiguousarray(moving_xy, dtype=np.float64).reshape(-1, 2)
        self.moving_z = np.ascontiguousarray(moving_z, dtype=np.float64).reshape(-1)
        self.n_u, self.n_v = len(self.fixed_z), len(self.moving_z)
        if self.n_u == 0 or self.n_v == 0:
            raise EmptyInputError("objective needs points from both clouds")
        if len(self.fixed_xy) != self.n_u or len(self.moving_xy) != self.n_v:
            raise ConfigError("coordinate and elevation arrays differ in length")
        if self.n_u + self.n_v > max_points:
            raise ConfigError(f"{self.n_u + self.n_v} points exceeds the cap of {max_points}; subsample first")
        self.penalty = penalty if penalty is not None else PenaltyConfig()
        self.nu = float(nu)
        self.center = (np.mean(self.moving_xy, axis=0) if center is None
                       else np.asarray(center, dtype=np.float64))

        stacked = np.concatenate([self.fixed_z, self.moving_z])
        both = np.vstack([self.fixed_xy, self.moving_xy])
        span = both.max(axis=0) - both.min(axis=0)
        self.diag = float(np.hypot(*span)) or 1.0
        self.var = float(max(np.var(stacked), 1e-12 * max(1.0, float(np.mean(stacked ** 2)))))
        self.bounds = bounds if bounds is not None else Bounds.default(1.0, self.var, self.diag)
        self.free = np.ones(N_PARAMS, bool) if free is None else np.asarray(free, bool).copy()
        if self.free.shape != (N_PARAMS,):
            raise ConfigError("free mask must have one entry per parameter")
        self.base = self.default_init() if base is None else np.asarray(base, dtype=np.float64).copy()

        self._d11 = distance_matrix(self.fixed_xy)
        # rigid maps preserve distances, so the moving block never needs the transform
        self._d22 = distance_matrix(self.moving_xy)
        self._moving_centered = self.moving_xy - self.center
        self._corr_cache = (None, None)
        self._cross_cache = (None, None)
        self._chol_cache = (None, None)
        self.n_evals = 0

    # -- parameter bookkeeping -------------------------------------------------
    def default_init(self) -> np.ndarray:
        """Zero transform; ``sigma2`` = sample variance, ``a`` = window diagonal / 4, ``tau2`` = 0.01 sigma2."""
        v = np.zeros(N_PARAMS)
        v[4] = np.log(self.var)
        v[5] = np.log(self.diag / 4.0)
        v[6] = np.log(0.01 * self.var)
        return self.bounds.clip(v)

    def expand(self, x_free) -> np.ndarray:
        theta = self.base.copy()
        theta[self.free] = x_free
        return theta

    def params(self, theta) -> RigidParams:
        return unpack(theta, nu=self.nu, center=self.center)

    def transformed_moving(self, theta) -> np.ndarray:
        return self._moving_centered @ rotation_matrix(theta[3]).T + self.center + theta[0:2]

    # -- evaluation --------------------------------------------------------------
    def _corr_blocks(self, a):
        key, val = self._corr_cache
        if key != a:
            val = (matern_correlation(self._d11, a, self.nu), matern_correlation(self._d22, a, self.nu))
            self._corr_cache = (a, val)
        return val

    def _cross_corr(self, a, r_x, r_y, phi):
        key = (a, r_x, r_y, phi)
        k, val = self._cross_cache
        if k != key:
            tm = self._moving_centered @ rotation_matrix(phi).T + self.center + np.array([r_x, r_y])
            val = matern_correlation(distance_matrix(self.fixed_xy, tm), a, self.nu)
            self._cross_cache = (key, val)
        return val

    def _factor(self, theta):
        r_x, r_y, _, phi = (float(t) for t in theta[:4])
        sigma2, a, tau2 = (float(t) for t in np.exp(theta[4:7]))
        key = (sigma2, a, tau2, r_x, r_y, phi)
        k, val = self._chol_cache
        if k == key:
            return val
        c11, c22 = self._corr_blocks(a)
        c12 = self._cross_corr(a, r_x, r_y, phi)
        n_u, n = self.n_u, self.n_u + self.n_v
        K = np.empty((n, n))
        K[:n_u, :n_u] = sigma2 * c11
        K[n_u:, n_u:] = sigma2 * c22
        K[:n_u, n_u:] = sigma2 * c12
        K[n_u:, :n_u] = K[:n_u, n_u:].T
        K.flat[:: n + 1] += tau2
        L = cholesky_lower(K)
        val = (L, 2.0 * float(np.sum(np.log(np.diag(L)))))
        self._chol_cache = (key, val)
        return val

    def nll(self, theta) -> float:
        """Negative log-likelihood only (no penalty); raises on an indefinite covariance."""
        theta = np.asarray(theta, dtype=np.float64)
        L, logdet = self._factor(theta)
        resid = np.concatenate([self.fixed_z, self.moving_z + theta[2]])
        w = solve_triangular(L, resid, lower=True, check_finite=False)
        return 0.5 * (logdet + float(w @ w) + len(resid) * LOG_2PI)

    def penalty_term(self, theta) -> float:
        return float(penalty_value(theta[0], theta[1], theta[2], theta[3], self.penalty))

    def value(self, theta) -> float:
        """Penalized objective; an indefinite covariance returns ``1e10 + |theta|^2``."""
        theta = np.asarray(theta, dtype=np.float64)
        self.n_evals += 1
        try:
            out = self.nll(theta) + self.penalty_term(theta)
        except IndefiniteCovarianceError as exc:
            log.warning("indefinite covariance at theta=%s (pivot %d); barrier value used", theta, exc.pivot)
            return BARRIER + float(theta @ theta)
        if not np.isfinite(out):
            return BARRIER + float(theta @ theta)
        return out

    __call__ = value

    def free_value(self, x_free) -> float:
        return self.value(self.expand(x_free))


def objective_value(obj: Objective, theta) -> float:
    return obj.value(theta)


# -- finite differences --------------------------------------------------------

def fd_steps(x, rel_step=1e-5, abs_floor=1e-7) -> np.ndarray:
    return np.maximum(rel_step * np.abs(np.asarray(x, dtype=np.float64)), abs_floor)


def fd_gradient(f, x, rel_step=1e-5, abs_floor=1e-7, steps=None) -> np.ndarray:
    """Central-difference gradient with step ``max(rel_step |x_i|, abs_floor)``."""
    x = np.asarray(x, dtype=np.float64)
    h = fd_steps(x, rel_step, abs_floor) if steps is None else np.broadcast_to(steps, x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def numerical_hessian(f, x, steps=None, lower=None, upper=None) -> np.ndarray:
    """Second-difference Hessian, symmetrized as ``(H + H^T) / 2``.

    Coordinates closer than one step to a bound switch to one-sided
    differences (first-order accurate) and a ``RuntimeWarning`` is issued.
    """
    x = np.asarray(x, dtype=np.float64)
    p = x.size
    h = np.maximum(1e-4 * np.maximum(np.abs(x), 1.0), 1e-6) if steps is None else np.broadcast_to(
        np.asarray(steps, dtype=np.float64), x.shape).copy()
    lo = np.full(p, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
    hi = np.full(p, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    # +1 forward, -1 backward, 0 central
    side = np.zeros(p, dtype=int)
    side[x + h > hi] = -1
    side[x - h < lo] = 1
    if np.any(side != 0):
        names = [PARAM_NAMES[i] if p == N_PARAMS else str(i) for i in np.flatnonzero(side)]
        warnings.warn(f"Hessian uses one-sided differences near bounds for {names}", RuntimeWarning, stacklevel=2)

    cache = {}

    def fx(offsets):
        key = tuple(offsets)
        if key not in cache:
            xx = x.copy()
            for i, k in offsets:
                xx[i] += k * h[i]
            cache[key] = f(xx)
        return cache[key]

    f0 = fx(())
    H = np.empty((p, p))
    for i in range(p):
        if side[i] == 0:
            H[i, i] = (fx(((i, 1),)) - 2.0 * f0 + fx(((i, -1),))) / h[i] ** 2
        else:
            s = side[i]
            H[i, i] = (fx(((i, 2 * s),)) - 2.0 * fx(((i, s),)) + f0) / h[i] ** 2
    for i in range(p):
        for j in range(i + 1, p):
            if side[i] == 0 and side[j] == 0:
                val = (fx(((i, 1), (j, 1))) - fx(((i, 1), (j, -1)))
                       - fx(((i, -1), (j, 1))) + fx(((i, -1), (j, -1)))) / (4.0 * h[i] * h[j])
            else:
                si = side[i] or 1
                sj = side[j] or 1
                val = (fx(((i, si), (j, sj))) - fx(((i, si),)) - fx(((j, sj),)) + f0) / (si * sj * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return 0.5 * (H + H.T)


# -- fitting -------------------------------------------------------------------

@dataclass
class FitResult:
    theta: np.ndarray
    theta_hat: RigidParams
    nll: float
    hessian: np.ndarray
    param_cov: np.ndarray
    converged: bool
    n_evals: int
    free: np.ndarray
    degenerate: bool = False
    init_value: float = np.nan
    message: str = ""
    starts: list = field(default_factory=list)

    @property
    def free_names(self) -> list[str]:
        return [n for n, f in zip(PARAM_NAMES, self.free) if f]

    def full_cov(self) -> np.ndarray:
        """Parameter covariance embedded in a 7x7 matrix (zeros for fixed entries)."""
        C = np.zeros((N_PARAMS, N_PARAMS))
        idx = np.flatnonzero(self.free)
        C[np.ix_(idx, idx)] = self.param_cov
        return C

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.full_cov()), 0.0, None))


def _cov_from_hessian(H):
    try:
        L = cholesky_lower(H)
    except (IndefiniteCovarianceError, NumericalError):
        return np.linalg.pinv(H, hermitian=True), True
    return cho_solve((L, True), np.eye(len(H))), False


def _warm_covariance(obj: Objective, init, maxiter, rel_step, abs_floor):
    """Fit only the free covariance entries with the transform held at ``init``."""
    cmask = obj.free.copy()
    cmask[:4] = False
    if not cmask.any() or not obj.free[:4].any():
        return init
    lo, hi = obj.bounds.as_arrays()

    def f(x):
        theta = init.copy()
        theta[cmask] = x
        return obj.value(theta)

    res = minimize(f, init[cmask], jac=lambda x: fd_gradient(f, x, rel_step, abs_floor), method="L-BFGS-B",
                   bounds=list(zip(lo[cmask], hi[cmask])), options={"maxiter": maxiter})
    out = init.copy()
    if np.isfinite(res.fun) and res.fun <= f(init[cmask]):
        out[cmask] = res.x
    return out


def fit_rigid(obj: Objective, init=None, n_starts=3, seed=0, jitter=0.25, maxiter=500,
              rel_step=1e-5, abs_floor=1e-7, hessian=True, warm_start=True) -> FitResult:
    """Multi-start L-BFGS-B on the penalized objective with central-difference gradients.

    Start 0 is ``init`` (default :meth:`Objective.default_init`); the remaining
    starts jitter the free transform entries uniformly by ``jitter`` times the
    half-width of their bounds. The lowest objective wins. With
    ``warm_start`` the covariance entries of ``init`` are first fitted with
    the transform held fixed, which keeps the joint search from stepping
    off toward the box corners while the covariance is still poor.
    """
    init = obj.base.copy() if init is None else np.asarray(init, dtype=np.float64).copy()
    obj.bounds.check(init)
    if warm_start:
        init = _warm_covariance(obj, init, maxiter, rel_step, abs_floor)
    obj.base = init.copy()
    free = obj.free
    lo, hi = obj.bounds.as_arrays()
    lo_f, hi_f = lo[free], hi[free]
    x0 = init[free]

    rng = np.random.default_rng(seed)
    starts = [x0]
    tmask = np.zeros(N_PARAMS, bool)
    tmask[:4] = True
    tmask_f = tmask[free]
    for _ in range(max(0, n_starts - 1)):
        xs = x0.copy()
        half = 0.5 * (hi_f - lo_f)
        xs[tmask_f] += jitter * half[tmask_f] * rng.uniform(-1.0, 1.0, size=int(tmask_f.sum()))
        starts.append(np.clip(xs, lo_f, hi_f))

    f = obj.free_value

    def grad(x):
        return fd_gradient(f, x, rel_step, abs_floor)

    f_init = f(x0)
    best_x, best_f, best_res = x0, f_init, None
    summaries = []
    for xs in starts:
        res = minimize(f, xs, jac=grad, method="L-BFGS-B", bounds=list(zip(lo_f, hi_f)),
                       options={"maxiter": maxiter})
        fx = float(res.fun)
        summaries.append((fx, bool(res.success)))
        if fx < best_f or best_res is None and fx <= best_f:
            best_x, best_f, best_res = np.asarray(res.x, dtype=np.float64), fx, res

    converged = best_res is not None and bool(best_res.success) and best_f <= f_init
    message = "" if best_res is None else str(best_res.message)
    if best_res is None:
        message = "no start improved on the initial value"
    theta = obj.expand(best_x)
    best_f = obj.value(theta)

    k = int(free.sum())
    if hessian and k:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            H = numerical_hessian(f, best_x, lower=lo_f, upper=hi_f)
        if caught:
            log.debug("%s", caught[0].message)
        cov, degenerate = _cov_from_hessian(H)
    else:
        H = np.full((k, k), np.nan)
        cov, degenerate = np.full((k, k), np.nan), True

    return FitResult(
        theta=theta,
        theta_hat=obj.params(theta),
        nll=best_f,
        hessian=H,
        param_cov=cov,
        converged=converged,
        n_evals=obj.n_evals,
        free=free.copy(),
        degenerate=degenerate,
        init_value=f_init,
        message=message,
        starts=summaries,
    )
