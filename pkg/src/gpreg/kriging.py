"""Local kriging of elevation from the k nearest planar neighbors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial import cKDTree

from .covariance import MaternParams, cholesky_lower, distance_matrix, matern_correlation
from .errors import ConfigError, EmptyInputError
from .pointcloud import PointCloud

SURFACE_KEYS = ("log_sigma2", "log_a", "log_tau2")


@dataclass(frozen=True)
class KrigingConfig:
    """``params`` for a stationary model, or ``surfaces`` (log-scale, keyed by
    ``log_sigma2``, ``log_a``, ``log_tau2``) for spatially varying parameters."""

    k: int = 1000
    params: MaternParams | None = None
    surfaces: dict | None = None
    nu: float = 1.0
    center_mean: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if (self.params is None) == (self.surfaces is None):
            raise ConfigError("give exactly one of params or surfaces")
        if self.surfaces is not None:
            missing = [s for s in SURFACE_KEYS if s not in self.surfaces]
            if missing:
                raise ConfigError(f"missing parameter surfaces {missing}")

    def params_at(self, query) -> list[MaternParams]:
        q = np.asarray(query, dtype=np.float64).reshape(-1, 2)
        if self.params is not None:
            return [self.params] * len(q)
        s2, a, t2 = (np.exp(self.surfaces[key].predict(q)) for key in SURFACE_KEYS)
        return [MaternParams(float(s2[i]), float(a[i]), self.nu, float(t2[i])) for i in range(len(q))]


class Prediction(NamedTuple):
    location: np.ndarray
    mean: float
    variance: float


def _xy(cloud):
    return cloud.xy if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 2)


def knn(cloud, query, k, tree: cKDTree | None = None) -> np.ndarray:
    """Indices of the ``k`` nearest planar neighbors of one query, nearest first.

    Exact; equal distances are ordered by index, including ties at the
    ``k``-th distance.
    """
    xy = _xy(cloud)
    n = len(xy)
    q = np.asarray(query, dtype=np.float64).reshape(2)
    if k >= n:
        d = np.linalg.norm(xy - q, axis=1)
        return np.lexsort((np.arange(n), d))
    tree = tree or cKDTree(xy)
    dk, _ = tree.query(q, k=k)
    cand = np.asarray(tree.query_ball_point(q, dk[-1] * (1 + 1e-12) + 1e-300), dtype=np.intp)
    d = np.linalg.norm(xy[cand] - q, axis=1)
    order = np.lexsort((cand, d))
    return cand[order[:k]]


class LocalKriger:
    """Simple kriging around the neighbor sample mean, one local system per query.

    The spatial index is built once; predictions are independent of how
    neighbors are ordered.
    """

    def __init__(self, xy, z, cfg: KrigingConfig):
        self.xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        self.z = np.asarray(z, dtype=np.float64).reshape(-1)
        if len(self.z) == 0:
            raise EmptyInputError("kriging data is empty")
        if len(self.z) != len(self.xy):
            raise ConfigError("xy and z lengths differ")
        self.cfg = cfg
        self.tree = cKDTree(self.xy)

    @classmethod
    def from_cloud(cls, cloud: PointCloud, cfg: KrigingConfig):
        return cls(cloud.xy, cloud.z, cfg)

    def _one(self, q, p: MaternParams):
        nb = knn(self.xy, q, self.cfg.k, self.tree)
        X, y = self.xy[nb], self.z[nb]
        m = float(np.mean(y)) if self.cfg.center_mean else 0.0
        C = p.sigma2 * matern_correlation(distance_matrix(X), p.a, p.nu)
        C.flat[:: len(nb) + 1] += p.tau2
        c = p.sigma2 * matern_correlation(np.linalg.norm(X - q, axis=1), p.a, p.nu)
        L = cholesky_lower(C)
        w = cho_solve((L, True), c)
        mean = m + w @ (y - m)
        var = p.sigma2 + p.tau2 - c @ w
        return mean, max(var, 0.0)

    def predict(self, query):
        """Means and variances, each ``(m,)``, at ``(m, 2)`` query points."""
        q = np.asarray(query, dtype=np.float64).reshape(-1, 2)
        params = self.cfg.params_at(q)
        out = np.array([self._one(q[i], params[i]) for i in range(len(q))]).reshape(-1, 2)
        return out[:, 0], out[:, 1]


def krige(cloud: PointCloud, query, cfg: KrigingConfig) -> Prediction:
    """Predict the elevation at one planar location."""
    kr = LocalKriger.from_cloud(cloud, cfg)
    q = np.asarray(query, dtype=np.float64).reshape(2)
    mean, var = kr.predict(q)
    return Prediction(q, float(mean[0]), float(var[0]))
