"""Rigid planar transformation, its parameter vector, and the regularization penalty.

The planar map rotates about a configurable center ``c``::

    T(s) = R(phi) (s - c) + c + r,   R(phi) = [[cos phi, sin phi], [-sin phi, cos phi]]

With ``c = 0`` this is exactly ``R s + r``. Elevations are shifted by
``+mu_z``, so applying the fitted parameters to the moving cloud registers it
into the fixed frame.

Optimizer coordinates (see :func:`pack`) are::

    [r_x, r_y, mu_z, phi, log sigma2, log a, log tau2]
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import i0e

from .covariance import MaternParams
from .errors import BoundsError, ParameterDomainError

PARAM_NAMES = ("r_x", "r_y", "mu_z", "phi", "log_sigma2", "log_a", "log_tau2")
TRANSFORM_SLICE = slice(0, 4)
N_PARAMS = len(PARAM_NAMES)

PHI_BOUNDS = (-np.pi / 4 + 0.1, np.pi / 4)


def rotation_matrix(phi) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class RigidParams:
    r_x: float = 0.0
    r_y: float = 0.0
    mu_z: float = 0.0
    phi: float = 0.0
    cov: MaternParams = field(default_factory=lambda: MaternParams(1.0, 1.0, 1.0, 0.0))
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def r(self) -> np.ndarray:
        return np.array([self.r_x, self.r_y])

    @property
    def R(self) -> np.ndarray:
        return rotation_matrix(self.phi)

    def inverse(self) -> "RigidParams":
        """Parameters of the inverse map ``(R^T, -R^T r, -mu_z)`` about the same center."""
        r_inv = -self.R.T @ self.r
        return replace(self, r_x=float(r_inv[0]), r_y=float(r_inv[1]), mu_z=-self.mu_z, phi=-self.phi)

    def origin_translation(self) -> np.ndarray:
        """Translation ``r0`` such that ``T(s) = R s + r0`` (rotation about the origin)."""
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.R @ c + self.r

    def at_center(self, center) -> "RigidParams":
        """Same map re-expressed with rotation about ``center``."""
        c_new = np.asarray(center, dtype=np.float64)
        r_new = self.origin_translation() - c_new + self.R @ c_new
        return replace(self, r_x=float(r_new[0]), r_y=float(r_new[1]), center=(float(c_new[0]), float(c_new[1])))


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float = 5.0
    kappa: float = 100.0

    def __post_init__(self):
        if not (self.lam >= 0 and self.kappa >= 0):
            raise ParameterDomainError("penalty weights must be non-negative")


@dataclass(frozen=True)
class Bounds:
    """Box constraints in optimizer coordinates, one ``(low, high)`` pair per entry of :data:`PARAM_NAMES`."""

    low: tuple
    high: tuple

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=np.float64)
        hi = np.asarray(self.high, dtype=np.float64)
        if lo.shape != (N_PARAMS,) or hi.shape != (N_PARAMS,):
            raise ParameterDomainError(f"bounds need {N_PARAMS} entries")
        if not np.all(lo < hi):
            bad = [PARAM_NAMES[i] for i in np.flatnonzero(~(lo < hi))]
            raise ParameterDomainError(f"empty bound interval for {bad}")
        object.__setattr__(self, "low", tuple(map(float, lo)))
        object.__setattr__(self, "high", tuple(map(float, hi)))

    @classmethod
    def default(cls, translation=1.0, sigma2_ref=1.0, range_ref=1.0, phi=PHI_BOUNDS):
        """Translation box ``(-t, t)``, rotation ``phi``; covariance bounds scaled by data.

        ``sigma2 in [1e-4, 1e2] * sigma2_ref``, ``a in [1e-3, 1e2] * range_ref`` and
        ``tau2 in [1e-8, 1] * sigma2_ref``.
        """
        ls, la = np.log(sigma2_ref), np.log(range_ref)
        low = (-translation, -translation, -translation, phi[0],
               ls + np.log(1e-4), la + np.log(1e-3), ls + np.log(1e-8))
        high = (translation, translation, translation, phi[1],
                ls + np.log(1e2), la + np.log(1e2), ls)
        return cls(low, high)

    def as_arrays(self):
        return np.asarray(self.low), np.asarray(self.high)

    def contains(self, v) -> bool:
        lo, hi = self.as_arrays()
        v = np.asarray(v)
        return bool(np.all(v >= lo) and np.all(v <= hi))

    def check(self, v):
        lo, hi = self.as_arrays()
        v = np.asarray(v, dtype=np.float64)
        bad = np.flatnonzero((v < lo) | (v > hi))
        if bad.size:
            detail = ", ".join(f"{PARAM_NAMES[i]}={v[i]:.6g} not in [{lo[i]:.6g}, {hi[i]:.6g}]" for i in bad)
            raise BoundsError(f"out of bounds: {detail}")

    def clip(self, v) -> np.ndarray:
        lo, hi = self.as_arrays()
        return np.clip(v, lo, hi)


def transform_xy(xy, phi, r, center=(0.0, 0.0)) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    return (xy - c) @ rotation_matrix(phi).T + c + np.asarray(r, dtype=np.float64)


def apply_rigid(s, y, p: RigidParams):
    """Transform planar point(s) ``s`` and elevation(s) ``y``.

    Returns ``(T(s), y + mu_z)``; works for a single point or arrays.
    """
    s = np.asarray(s, dtype=np.float64)
    out = transform_xy(np.atleast_2d(s), p.phi, p.r, p.center)
    out = out.reshape(s.shape)
    return out, np.asarray(y, dtype=np.float64) + p.mu_z


def log_i0(kappa) -> float:
    """``log I_0(kappa)`` without overflow (exponentially scaled Bessel)."""
    return float(np.log(i0e(kappa)) + abs(kappa))


def penalty_value(r_x, r_y, mu_z, phi, cfg: PenaltyConfig) -> float:
    return 0.5 * cfg.lam * (r_x * r_x + r_y * r_y + mu_z * mu_z) + log_i0(cfg.kappa) - cfg.kappa * np.cos(phi)


def penalty(p: RigidParams, cfg: PenaltyConfig) -> float:
    """Gaussian penalty on translations plus a von Mises penalty on the rotation angle."""
    return float(penalty_value(p.r_x, p.r_y, p.mu_z, p.phi, cfg))


def pack(p: RigidParams) -> np.ndarray:
    c = p.cov
    return np.array([p.r_x, p.r_y, p.mu_z, p.phi, np.log(c.sigma2), np.log(c.a),
                     np.log(c.tau2) if c.tau2 > 0 else -np.inf])


def unpack(v, nu=1.0, center=(0.0, 0.0), bounds: Bounds | None = None) -> RigidParams:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (N_PARAMS,):
        raise ParameterDomainError(f"expected {N_PARAMS} parameters, got shape {v.shape}")
    if bounds is not None:
        bounds.check(v)
    cov = MaternParams(float(np.exp(v[4])), float(np.exp(v[5])), nu, float(np.exp(v[6])))
    return RigidParams(float(v[0]), float(v[1]), float(v[2]), float(v[3]), cov,
                       (float(center[0]), float(center[1])))
