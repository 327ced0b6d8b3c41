"""Isotropic Matérn covariance and Gaussian log-density machinery.

The kernel is parameterized with the range acting directly on distance,
without the ``sqrt(2 nu)`` rescaling used by some libraries::

    C(d) = sigma2 * 2**(1 - nu) / Gamma(nu) * (d / a)**nu * K_nu(d / a)

so ``nu = 0.5`` gives ``sigma2 * exp(-d / a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import gammaln, k0, k1, kv

from .errors import IndefiniteCovarianceError, NumericalError, ParameterDomainError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    a: float
    nu: float = 1.0
    tau2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ParameterDomainError(f"sigma2 must be > 0, got {self.sigma2}")
        if not (np.isfinite(self.a) and self.a > 0):
            raise ParameterDomainError(f"range a must be > 0, got {self.a}")
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ParameterDomainError(f"smoothness nu must be > 0, got {self.nu}")
        if not (np.isfinite(self.tau2) and self.tau2 >= 0):
            raise ParameterDomainError(f"nugget tau2 must be >= 0, got {self.tau2}")


def matern_correlation(d, a, nu=1.0, method="auto"):
    """Matérn correlation at distances ``d`` (any shape), equal to 1 at ``d = 0``.

    ``method="auto"`` uses closed forms for ``nu`` in {0.5, 1.5, 2.5} and the
    ``k0``/``k1`` recurrence for ``nu`` in {1, 2}; ``"bessel"`` always goes
    through the general ``K_nu`` routine.
    """
    u = np.asarray(d, dtype=np.float64) / a
    if method == "auto":
        if nu == 0.5:
            return np.exp(-u)
        if nu == 1.5:
            return (1.0 + u) * np.exp(-u)
        if nu == 2.5:
            return (1.0 + u + u * u / 3.0) * np.exp(-u)
    elif method != "bessel":
        raise ValueError(f"unknown method {method!r}")

    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    if method == "auto" and nu == 1.0:
        # 2^0/Gamma(1) * u K_1(u)
        out[pos] = up * k1(up)
    elif method == "auto" and nu == 2.0:
        # K_2 = K_0 + (2/u) K_1 ; 2^{-1}/Gamma(2) u^2 K_2
        out[pos] = 0.5 * (up * up * k0(up) + 2.0 * up * k1(up))
    else:
        log_c = (1.0 - nu) * np.log(2.0) - gammaln(nu)
        with np.errstate(under="ignore"):
            vals = np.exp(log_c + nu * np.log(up)) * kv(nu, up)
        # K_nu underflows to 0 far out; tiny u loses precision but tends to 1
        vals = np.where(np.isfinite(vals), vals, 0.0)
        out[pos] = vals
    return out


def matern(d, p: MaternParams, method="auto"):
    """Matérn covariance (no nugget) at distance(s) ``d``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ParameterDomainError("distances must be non-negative")
    return p.sigma2 * matern_correlation(d, p.a, p.nu, method=method)


@dataclass(frozen=True, eq=False)
class JointCov:
    """Dense joint covariance of the stacked (fixed, moving) responses, nugget included."""

    matrix: np.ndarray
    n_u: int
    n_v: int

    @property
    def n(self) -> int:
        return self.n_u + self.n_v


def cross_cov_blocks(fixed_xy, moving_xy, transform, p: MaternParams) -> JointCov:
    """Assemble ``Sigma + tau2 I`` for fixed locations and transformed moving locations.

    ``transform`` maps an ``(n, 2)`` array of moving planar coordinates into the
    fixed frame (for example :func:`gpreg.transform.transform_xy` bound to a
    parameter set); ``None`` means identity.
    """
    fixed_xy = np.atleast_2d(np.asarray(fixed_xy, dtype=np.float64))
    moving_xy = np.atleast_2d(np.asarray(moving_xy, dtype=np.float64))
    if len(fixed_xy) == 0 or len(moving_xy) == 0:
        raise ParameterDomainError("both clouds must be non-empty")
    tm = moving_xy if transform is None else np.asarray(transform(moving_xy), dtype=np.float64)
    if not np.all(np.isfinite(tm)):
        raise NumericalError("transformed moving coordinates are not finite")
    n_u, n_v = len(fixed_xy), len(tm)
    K = np.empty((n_u + n_v, n_u + n_v))
    K[:n_u, :n_u] = matern(distance_matrix(fixed_xy), p)
    K[n_u:, n_u:] = matern(distance_matrix(tm), p)
    K[:n_u, n_u:] = matern(distance_matrix(fixed_xy, tm), p)
    K[n_u:, :n_u] = K[:n_u, n_u:].T
    K[np.diag_indices_from(K)] += p.tau2
    return JointCov(K, n_u, n_v)


def distance_matrix(x, y=None):
    x = np.atleast_2d(x)
    if y is None:
        if len(x) == 1:
            return np.zeros((1, 1))
        return squareform(pdist(x))
    return cdist(x, np.atleast_2d(y))


def cholesky_lower(A):
    """Lower Cholesky factor; raises :class:`IndefiniteCovarianceError` with the failing pivot."""
    L, info = lapack.dpotrf(np.asarray(A, dtype=np.float64), lower=1, clean=1)
    if info > 0:
        raise IndefiniteCovarianceError(info)
    if info < 0:
        raise NumericalError(f"dpotrf argument {-info} invalid")
    return L


def nll_from_cholesky(L, resid):
    """Gaussian NLL given the lower factor of the covariance and ``y - mean``."""
    w = solve_triangular(L, resid, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return 0.5 * (logdet + w @ w + len(resid) * LOG_2PI)


def nll_gaussian(y, mean, cov) -> float:
    """``0.5 * [logdet C + r' C^{-1} r + n log 2 pi]`` through a Cholesky factor."""
    C = cov.matrix if isinstance(cov, JointCov) else np.atleast_2d(np.asarray(cov, dtype=np.float64))
    r = np.asarray(y, dtype=np.float64).reshape(-1) - np.asarray(mean, dtype=np.float64).reshape(-1)
    if C.shape != (r.size, r.size):
        raise ParameterDomainError(f"covariance shape {C.shape} does not match data length {r.size}")
    L = cholesky_lower(C)
    return float(nll_from_cholesky(L, r))
