"""Smooth surfaces over window centers and the per-point nonrigid field.

Each locally estimated parameter is smoothed on its own by a thin-plate
spline (``kind="tps"``) or a Gaussian process with fixed heteroscedastic
knot noise (``kind="gp"``). The GP kind also supports conditional
simulation, which is how parameter uncertainty is pushed through to the
registered cloud.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .covariance import LOG_2PI, cholesky_lower, distance_matrix, matern_correlation
from .errors import ConfigError, FieldError, IndefiniteCovarianceError, NumericalError, RankDeficiencyError
from .pointcloud import PointCloud
from .transform import PARAM_NAMES, rotation_matrix

log = logging.getLogger(__name__)

MAX_EXACT_SIM = 5000
SIM_JITTER = 1e-10
GCV_GRID = np.logspace(-8, 2, 25)
TRANSFORM_FIELDS = ("t_x", "t_y", "mu_z", "phi")
COV_FIELDS = ("log_sigma2", "log_a", "log_tau2")


def tps_kernel(r):
    """``r^2 log r`` with the removable singularity at 0 set to 0."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


def _affine_basis(xy):
    return np.column_stack([np.ones(len(xy)), xy[:, 0], xy[:, 1]])


# -- thin-plate spline -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TPSSurface:
    knots: np.ndarray
    coef: np.ndarray
    affine: np.ndarray
    smoothing: float
    shift: np.ndarray
    scale: float
    gcv: float = np.nan
    kind: str = "tps"

    def _local(self, xy):
        return (np.asarray(xy, dtype=np.float64).reshape(-1, 2) - self.shift) / self.scale

    def predict(self, query) -> np.ndarray:
        q = self._local(query)
        K = tps_kernel(distance_matrix(q, self._local(self.knots)))
        return K @ self.coef + _affine_basis(q) @ self.affine

    def to_json(self) -> dict:
        return {"kind": "tps", "knots": self.knots.tolist(), "coefficients": self.coef.tolist(),
                "affine": self.affine.tolist(), "smoothing": self.smoothing,
                "shift": self.shift.tolist(), "scale": self.scale, "gcv": self.gcv}


def _tps_solve(K, P, y, ridge):
    n = len(y)
    M = np.zeros((n + 3, n + 3))
    M[:n, :n] = K + np.diag(ridge)
    M[:n, n:] = P
    M[n:, :n] = P.T
    rhs = np.concatenate([y, np.zeros(3)])
    sol = np.linalg.solve(M, rhs)
    return sol[:n], sol[n:], M


def fit_tps(centers, values, weights=None, smoothing=None, max_df=0.95) -> TPSSurface:
    """Thin-plate spline with affine null space.

    ``smoothing=None`` picks the ridge by generalized cross-validation over
    25 log-spaced values from 1e-8 to 1e2 times the mean absolute kernel
    entry; ``smoothing=0`` interpolates. ``weights`` are per-knot precisions
    (normalized to mean one); knot ``i`` gets ridge ``lambda / w_i``.
    Candidates whose effective degrees of freedom exceed ``max_df * n`` are
    skipped, since with few knots the score flattens out toward interpolation.
    """
    X = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    n = len(y)
    if n < 4 or len(X) != n:
        raise ConfigError("thin-plate spline needs at least 4 knots with matching values")
    shift = X.mean(axis=0)
    scale = float(np.max(np.ptp(X, axis=0))) or 1.0
    Xl = (X - shift) / scale
    P = _affine_basis(Xl)
    if np.linalg.matrix_rank(P) < 3:
        raise RankDeficiencyError("thin-plate spline knots are collinear")
    K = tps_kernel(distance_matrix(Xl))
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ConfigError("weights must be positive and finite")
    w = w / w.mean()

    if smoothing is not None:
        lam = float(smoothing)
        c, d, _ = _tps_solve(K, P, y, lam / w)
        return TPSSurface(X.copy(), c, d, lam, shift, scale)

    off = ~np.eye(n, dtype=bool)
    kscale = float(np.mean(np.abs(K[off]))) or 1.0
    best = None
    for lam in GCV_GRID * kscale:
        ridge = lam / w
        c, d, M = _tps_solve(K, P, y, ridge)
        # influence matrix: yhat = [K P] M^{-1}[:, :n] y
        Minv = np.linalg.solve(M, np.vstack([np.eye(n), np.zeros((3, n))]))
        A = np.hstack([K, P]) @ Minv
        df = np.trace(A)
        if df > max_df * n:
            continue
        resid = y - A @ y
        score = float(np.mean(w * resid ** 2) / (1.0 - df / n) ** 2)
        if best is None or score < best[0]:
            best = (score, lam, c, d)
    score, lam, c, d = best
    return TPSSurface(X.copy(), c, d, float(lam), shift, scale, score)


# -- Gaussian process --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GPSurface:
    """Constant-mean GP with Matérn covariance and fixed per-knot noise variances.

    The constant mean is the generalized least-squares estimate and is
    treated as known when predicting (plug-in).
    """

    knots: np.ndarray
    values: np.ndarray
    noise_vars: np.ndarray
    sigma2: float
    a: float
    nu: float = 2.0
    kind: str = "gp"
    _state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        R = matern_correlation(distance_matrix(self.knots), self.a, self.nu)
        A = self.sigma2 * R + np.diag(self.noise_vars)
        L = cholesky_lower(A)
        ones = np.ones(len(self.values))
        ainv1 = cho_solve((L, True), ones)
        g = ainv1 / (ones @ ainv1)
        mean = float(g @ self.values)
        alpha = cho_solve((L, True), self.values - mean)
        self._state.update(L=L, g=g, mean=mean, alpha=alpha)

    @property
    def mean(self) -> float:
        return self._state["mean"]

    def cross_cov(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(-1, 2)
        return self.sigma2 * matern_correlation(distance_matrix(q, self.knots), self.a, self.nu)

    def predict(self, query) -> np.ndarray:
        return self.mean + self.cross_cov(query) @ self._state["alpha"]

    def variance(self, query) -> np.ndarray:
        k = self.cross_cov(query)
        w = solve_triangular(self._state["L"], k.T, lower=True)
        return np.clip(self.sigma2 - np.sum(w * w, axis=0), 0.0, None)

    def posterior_cov(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(-1, 2)
        Kqq = self.sigma2 * matern_correlation(distance_matrix(q), self.a, self.nu)
        w = solve_triangular(self._state["L"], self.cross_cov(q).T, lower=True)
        P = Kqq - w.T @ w
        return 0.5 * (P + P.T)

    def with_values(self, values) -> "GPSurface":
        """Same knots, noise and hyperparameters conditioned on new knot values."""
        return GPSurface(self.knots, np.asarray(values, dtype=np.float64).copy(), self.noise_vars,
                         self.sigma2, self.a, self.nu)

    def simulator(self, query, max_exact=MAX_EXACT_SIM) -> "ConditionalSimulator":
        return ConditionalSimulator(self, query, max_exact)

    def log_likelihood(self) -> float:
        L = self._state["L"]
        r = self.values - self.mean
        w = solve_triangular(L, r, lower=True)
        return -0.5 * (2 * np.sum(np.log(np.diag(L))) + w @ w + len(r) * LOG_2PI)

    def to_json(self) -> dict:
        return {"kind": "gp", "knots": self.knots.tolist(), "values": self.values.tolist(),
                "noise_vars": self.noise_vars.tolist(), "sigma2": self.sigma2, "a": self.a,
                "nu": self.nu, "mean": self.mean, "coefficients": self._state["alpha"].tolist()}


class ConditionalSimulator:
    """Posterior draws of a :class:`GPSurface` at fixed query points.

    The posterior mean is linear in the knot values, ``mean = W v``, and the
    posterior covariance does not depend on them, so both are factorized
    once and reused for any knot values (same hyperparameters).
    Above ``max_exact`` queries the draw is made exactly on a lattice of at
    most ``max_exact`` nodes and carried to each query by local kriging from
    its nearest lattice nodes.
    """

    def __init__(self, surface: GPSurface, query, max_exact=MAX_EXACT_SIM, n_local=12):
        self.surface = surface
        q = np.asarray(query, dtype=np.float64).reshape(-1, 2)
        self.query = q
        st = surface._state
        n = len(surface.values)
        B = cho_solve((st["L"], True), surface.cross_cov(q).T).T
        g = st["g"]
        self.W = np.outer(np.ones(len(q)), g) + B @ (np.eye(n) - np.outer(np.ones(n), g))
        self.exact = len(q) <= max_exact
        nodes = q if self.exact else _lattice(q, max_exact)
        P = surface.posterior_cov(nodes)
        P.flat[:: len(nodes) + 1] += SIM_JITTER * surface.sigma2
        try:
            self.L = cholesky_lower(P)
        except IndefiniteCovarianceError as exc:
            raise IndefiniteCovarianceError(exc.pivot, "posterior covariance is indefinite after jitter") from None
        if not self.exact:
            self.nodes = nodes
            tree = cKDTree(nodes)
            _, idx = tree.query(q, k=min(n_local, len(nodes)))
            self._idx = idx
            R = lambda d: matern_correlation(d, surface.a, surface.nu)  # noqa: E731
            weights = np.empty(idx.shape)
            for j in range(len(q)):
                nb = nodes[idx[j]]
                C = R(distance_matrix(nb)) + 1e-10 * np.eye(len(nb))
                c = R(np.linalg.norm(nb - q[j], axis=1))
                weights[j] = np.linalg.solve(C, c)
            self._weights = weights

    def mean(self, values=None) -> np.ndarray:
        v = self.surface.values if values is None else np.asarray(values, dtype=np.float64)
        return self.W @ v

    def draw(self, rng, values=None) -> np.ndarray:
        z = rng.standard_normal(self.L.shape[0])
        e = self.L @ z
        if not self.exact:
            e = np.sum(self._weights * e[self._idx], axis=1)
        return self.mean(values) + e


def _lattice(q, max_nodes):
    lo, hi = q.min(axis=0), q.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    m = max(2, int(np.floor(np.sqrt(max_nodes * span[0] / span[1]))))
    k = max(2, int(max_nodes // m))
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], m), np.linspace(lo[1], hi[1], k))
    return np.column_stack([gx.ravel(), gy.ravel()])


def fit_gp_surface(centers, values, noise_vars, nu=2.0) -> GPSurface:
    """Maximum-likelihood ``sigma2`` and range ``a`` with the knot noise held fixed."""
    X = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    nv = np.asarray(noise_vars, dtype=np.float64).reshape(-1)
    n = len(v)
    if n < 5:
        raise ConfigError("GP surface needs at least 5 knots")
    if np.any(nv < 0) or not np.all(np.isfinite(nv)):
        raise ConfigError("noise variances must be finite and non-negative")
    D = distance_matrix(X)
    diam = float(D.max()) or 1.0
    s0 = max(float(np.var(v)), float(np.mean(nv)), 1e-12 * max(1.0, float(np.mean(v * v))))
    lo = np.array([np.log(s0) - 20.0, np.log(1e-2 * diam)])
    hi = np.array([np.log(s0) + 5.0, np.log(10.0 * diam)])
    ones = np.ones(n)

    def nll(x):
        sigma2, a = np.exp(x)
        A = sigma2 * matern_correlation(D, a, nu) + np.diag(nv)
        try:
            L = cholesky_lower(A)
        except IndefiniteCovarianceError:
            return 1e10 + float(x @ x)
        ainv1 = cho_solve((L, True), ones)
        m = (ainv1 @ v) / (ones @ ainv1)
        w = solve_triangular(L, v - m, lower=True)
        return 0.5 * (2 * np.sum(np.log(np.diag(L))) + w @ w + n * LOG_2PI)

    best = None
    for frac in (0.1, 0.3, 1.0):
        x0 = np.clip([np.log(s0), np.log(frac * diam)], lo, hi)
        res = minimize(nll, x0, method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None or best.fun >= 1e10:
        raise NumericalError("GP surface likelihood could not be optimized")
    sigma2, a = map(float, np.exp(best.x))
    return GPSurface(X.copy(), v.copy(), nv.copy(), sigma2, a, nu)


# -- constant surface ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstantSurface:
    value: float
    knots: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    kind: str = "constant"

    def predict(self, query) -> np.ndarray:
        return np.full(len(np.asarray(query).reshape(-1, 2)), self.value)

    def to_json(self) -> dict:
        return {"kind": "constant", "value": self.value, "knots": self.knots.tolist()}


def predict(surface, query) -> np.ndarray:
    """Evaluate any surface at ``(m, 2)`` query points."""
    return surface.predict(query)


def conditional_sim(surface, query, seed, values=None, max_exact=MAX_EXACT_SIM) -> np.ndarray:
    """One posterior draw of a GP surface at ``query``."""
    if not isinstance(surface, GPSurface):
        raise ConfigError("conditional simulation requires a gaussian-process surface")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return surface.simulator(query, max_exact).draw(rng, values)


def surface_from_json(doc: dict):
    kind = doc["kind"]
    if kind == "tps":
        return TPSSurface(np.asarray(doc["knots"]), np.asarray(doc["coefficients"]), np.asarray(doc["affine"]),
                          float(doc["smoothing"]), np.asarray(doc["shift"]), float(doc["scale"]),
                          float(doc.get("gcv", np.nan)))
    if kind == "gp":
        return GPSurface(np.asarray(doc["knots"]), np.asarray(doc["values"]), np.asarray(doc["noise_vars"]),
                         float(doc["sigma2"]), float(doc["a"]), float(doc["nu"]))
    if kind == "constant":
        return ConstantSurface(float(doc["value"]), np.asarray(doc.get("knots", np.zeros((0, 2)))).reshape(-1, 2))
    raise ConfigError(f"unknown surface kind {kind!r}")


def fit_surface(kind, centers, values, noise_vars, smoothing=None):
    """Dispatch on ``kind``; identical values give a :class:`ConstantSurface`."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 1 or np.ptp(values) == 0.0:
        return ConstantSurface(float(values[0]), np.asarray(centers, dtype=np.float64).reshape(-1, 2))
    nv = np.asarray(noise_vars, dtype=np.float64)
    if kind == "tps":
        return fit_tps(centers, values, weights=1.0 / nv, smoothing=smoothing)
    if kind == "gp":
        try:
            return fit_gp_surface(centers, values, nv)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            log.warning("GP surface fit failed (%s); falling back to thin-plate spline", exc)
            return fit_tps(centers, values, weights=1.0 / nv, smoothing=smoothing)
    raise ConfigError(f"surface kind must be 'tps' or 'gp', not {kind!r}")


# -- nonrigid field -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NonrigidField:
    """Per-point transformation of the moving cloud.

    Point ``s`` maps to ``R(phi(s)) s + r(s)`` with ``r`` in the origin frame,
    and its elevation gains ``mu_z(s)``.
    """

    locations: np.ndarray
    r_x: np.ndarray
    r_y: np.ndarray
    mu_z: np.ndarray
    phi: np.ndarray
    extra: dict = field(default_factory=dict)
    surfaces: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.locations)

    def transformed_xy(self) -> np.ndarray:
        s = self.locations
        c, sn = np.cos(self.phi), np.sin(self.phi)
        return np.column_stack([c * s[:, 0] + sn * s[:, 1] + self.r_x, -sn * s[:, 0] + c * s[:, 1] + self.r_y])

    def displacement(self) -> np.ndarray:
        return self.transformed_xy() - self.locations

    def apply(self, moving: PointCloud) -> PointCloud:
        if len(moving) != len(self):
            raise ConfigError("field and cloud lengths differ")
        return PointCloud.from_arrays(self.transformed_xy(), moving.z + self.mu_z, role="moving")

    def estimated_deformation(self) -> np.ndarray:
        """Columns x, y, z, phi of the de-registration this field undoes."""
        d = self.displacement()
        return np.column_stack([-d[:, 0], -d[:, 1], -self.mu_z, -self.phi])

    @classmethod
    def from_displacement(cls, locations, t_x, t_y, mu_z, phi, extra=None, surfaces=None):
        """Build from per-point planar shifts; stores the origin-frame ``r = s + t - R(phi) s``."""
        s = np.asarray(locations, dtype=np.float64)
        c, sn = np.cos(phi), np.sin(phi)
        rs = np.column_stack([c * s[:, 0] + sn * s[:, 1], -sn * s[:, 0] + c * s[:, 1]])
        r = s + np.column_stack([t_x, t_y]) - rs
        return cls(s, r[:, 0], r[:, 1], np.asarray(mu_z, float), np.asarray(phi, float),
                   extra or {}, surfaces or {})

    def rows(self) -> list[dict]:
        d = self.displacement()
        out = []
        for j in range(len(self)):
            row = {"j": j, "s_x": self.locations[j, 0], "s_y": self.locations[j, 1],
                   "r_x": self.r_x[j], "r_y": self.r_y[j], "mu_z": self.mu_z[j], "phi": self.phi[j],
                   "dx": d[j, 0], "dy": d[j, 1]}
            for k, v in self.extra.items():
                row[k] = v[j]
            out.append(row)
        return out


def knot_values(estimates, include_cov=False):
    """Per-window values and noise variances for each field parameter.

    Planar translations are expressed as the window map's displacement at the
    window center ``g_k``; noise variances come from the window's parameter
    covariance (delta method for the displacement).
    """
    names = TRANSFORM_FIELDS + (COV_FIELDS if include_cov else ())
    vals = {n: np.empty(len(estimates)) for n in names}
    noise = {n: np.full(len(estimates), np.nan) for n in names}
    for i, est in enumerate(estimates):
        p = est.theta_hat
        g = np.asarray(est.center, dtype=np.float64)
        t = est.displacement_at(g)
        vals["t_x"][i], vals["t_y"][i] = t
        for n in names[2:]:
            vals[n][i] = est.theta[PARAM_NAMES.index(n)]
        C = est.param_cov
        if est.degenerate or not np.all(np.isfinite(C)):
            continue
        # d t / d (r_x, r_y, phi)
        dR = np.array([[-np.sin(p.phi), np.cos(p.phi)], [-np.cos(p.phi), -np.sin(p.phi)]])
        J = np.zeros((2, 7))
        J[:, 0:2] = np.eye(2)
        J[:, 3] = dR @ (g - np.asarray(p.center))
        Ct = J @ C @ J.T
        noise["t_x"][i], noise["t_y"][i] = Ct[0, 0], Ct[1, 1]
        for n in names[2:]:
            k = PARAM_NAMES.index(n)
            noise[n][i] = C[k, k]
    for n in names:
        nv = noise[n]
        good = np.isfinite(nv) & (nv > 0)
        fill = float(np.median(nv[good])) if good.any() else 1e-12
        nv[~good] = fill
    return vals, noise


def build_field(estimates, moving, kind="tps", seed=None, include_cov=False, smoothing=None,
                max_exact=MAX_EXACT_SIM) -> NonrigidField:
    """Fit one surface per parameter and evaluate (or simulate) it at every moving point.

    With a single estimate the field is that window's rigid map. With a
    ``seed`` each GP surface is conditionally simulated instead of predicted.
    """
    estimates = [e for e in estimates if e.converged] or list(estimates)
    xy = moving.xy if isinstance(moving, PointCloud) else np.asarray(moving, dtype=np.float64).reshape(-1, 2)
    if len(estimates) == 1:
        return rigid_field(estimates[0].theta_hat, xy, estimates[0].theta if include_cov else None)
    if len(estimates) < 5:
        raise FieldError(f"need at least 5 local estimates to build a field, got {len(estimates)}")
    if seed is not None and kind != "gp":
        raise ConfigError("conditional simulation needs kind='gp'")
    centers = np.array([e.center for e in estimates])
    vals, noise = knot_values(estimates, include_cov)
    rng = None if seed is None else np.random.default_rng(seed)
    surfaces, out = {}, {}
    for name in vals:
        surf = fit_surface(kind, centers, vals[name], noise[name], smoothing)
        surfaces[name] = surf
        if rng is not None and isinstance(surf, GPSurface):
            out[name] = surf.simulator(xy, max_exact).draw(rng)
        else:
            out[name] = surf.predict(xy)
    extra = {n: out[n] for n in COV_FIELDS if n in out}
    return NonrigidField.from_displacement(xy, out["t_x"], out["t_y"], out["mu_z"], out["phi"], extra, surfaces)


def rigid_field(params, xy, theta=None) -> NonrigidField:
    """Constant field reproducing one rigid map exactly."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    n = len(xy)
    r0 = params.origin_translation()
    extra = {}
    if theta is not None:
        for name in COV_FIELDS:
            extra[name] = np.full(n, float(theta[PARAM_NAMES.index(name)]))
    return NonrigidField(xy, np.full(n, r0[0]), np.full(n, r0[1]), np.full(n, params.mu_z),
                         np.full(n, params.phi), extra)


def surfaces_to_json(surfaces: dict) -> dict:
    return {name: s.to_json() for name, s in surfaces.items()}


def field_from_surfaces(surfaces: dict, xy) -> NonrigidField:
    """Predict a field at ``xy`` from previously fitted (for example deserialized) surfaces."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    out = {n: s.predict(xy) for n, s in surfaces.items()}
    extra = {n: out[n] for n in COV_FIELDS if n in out}
    return NonrigidField.from_displacement(xy, out["t_x"], out["t_y"], out["mu_z"], out["phi"], extra, surfaces)


__all__ = [
    "TPSSurface", "GPSurface", "ConstantSurface", "ConditionalSimulator", "NonrigidField",
    "fit_tps", "fit_gp_surface", "fit_surface", "predict", "conditional_sim", "build_field",
    "rigid_field", "knot_values", "surface_from_json", "surfaces_to_json", "field_from_surfaces",
    "tps_kernel", "rotation_matrix",
]
