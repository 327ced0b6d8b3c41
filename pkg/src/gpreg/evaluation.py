"""Deformation-recovery and predictive metrics, and the hold-out cross-validation harness."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .covariance import MaternParams
from .errors import ConfigError, UndefinedMetricError
from .kriging import KrigingConfig, LocalKriger
from .pipeline import register_nonrigid, register_rigid
from .pointcloud import PointCloud
from .surface import GPSurface, fit_surface, knot_values, NonrigidField, rigid_field
from .synth import COORDS
from .transform import PARAM_NAMES, unpack
from .windowing import FitOptions


def rmse(truth, pred) -> float:
    truth, pred = np.asarray(truth, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def _mask(applied, ncol):
    if all(isinstance(a, (bool, np.bool_)) for a in applied) and len(applied) == ncol:
        return np.asarray(applied, dtype=bool)
    return np.array([c in tuple(applied) for c in COORDS[:ncol]])


def nrmse(true_def, est_def, applied) -> dict:
    """Per-coordinate RMSE divided by the mean absolute applied deformation.

    ``true_def`` and ``est_def`` are ``(n, 4)`` with columns x, y, z, phi;
    ``applied`` names the deformed coordinates (or is a boolean mask). The
    normalizer pools every deformed column.
    """
    T = np.asarray(true_def, dtype=np.float64)
    E = np.asarray(est_def, dtype=np.float64)
    if T.shape != E.shape or T.ndim != 2:
        raise ConfigError(f"shape mismatch {T.shape} vs {E.shape}")
    mask = _mask(applied, T.shape[1])
    if not mask.any():
        raise UndefinedMetricError("no deformed coordinate to normalize by")
    mbar = float(np.mean(np.abs(T[:, mask])))
    if mbar == 0.0 or not np.isfinite(mbar):
        raise UndefinedMetricError("mean applied deformation is zero")
    err = np.sqrt(np.mean((T - E) ** 2, axis=0)) / mbar
    return {c: float(err[i]) for i, c in enumerate(COORDS[: T.shape[1]])}


def crps_ensemble(sims, y, fair=False) -> float:
    """Mean ensemble CRPS, ``mean|X_i - y| - 0.5 mean_ij|X_i - X_j|``.

    ``sims`` is ``(n_test, n_sim)``. The all-pairs form includes ``i = j``;
    ``fair=True`` excludes it (``n (n - 1)`` pairs).
    """
    X = np.asarray(sims, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] != len(y):
        raise ConfigError("one ensemble row per truth value expected")
    m = X.shape[1]
    if m < 2:
        raise ConfigError("ensemble needs at least 2 members")
    t1 = np.mean(np.abs(X - y[:, None]), axis=1)
    # sum_ij |x_i - x_j| from the gaps of the sorted sample; gap k is crossed by k (m - k) pairs
    gaps = np.diff(np.sort(X, axis=1), axis=1)
    k = np.arange(1, m)
    pair_sum = 2.0 * gaps @ (k * (m - k))
    t2 = pair_sum / (m * (m - 1) if fair else m * m)
    # the all-pairs score is non-negative; clip round-off only
    per_point = t1 - 0.5 * t2
    if not fair:
        per_point = np.maximum(per_point, 0.0)
    return float(np.mean(per_point))


@dataclass
class MetricReport:
    rmse: float
    crps: float
    n_test: int
    n_simulations: int
    method: str
    config: dict
    nrmse: dict | None = None
    predictions: np.ndarray | None = field(default=None, repr=False)
    ensemble: np.ndarray | None = field(default=None, repr=False)
    truth: np.ndarray | None = field(default=None, repr=False)

    def to_json(self, include_arrays=False) -> dict:
        out = {"method": self.method, "rmse": self.rmse, "crps": self.crps, "n_test": self.n_test,
               "n_simulations": self.n_simulations, "config": self.config}
        if self.nrmse is not None:
            out["nrmse"] = self.nrmse
        if include_arrays:
            for name in ("predictions", "ensemble", "truth"):
                v = getattr(self, name)
                out[name] = None if v is None else np.asarray(v).tolist()
        return out

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_json(**kw), indent=2)


def _mvn(rng, mean, cov, bounds=None):
    """Gaussian draw tolerating a singular (pseudo-inverse) covariance, projected onto ``bounds``."""
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    x = mean + V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(len(mean)))
    return x if bounds is None else bounds.clip(x)


def holdout_split(cloud: PointCloud, frac, seed):
    """Uniform hold-out without replacement; returns ``(train, test_indices)``."""
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"holdout_frac must lie in (0, 1), got {frac}")
    n_test = int(round(frac * len(cloud)))
    if n_test < 1:
        raise ConfigError("holdout is empty; increase holdout_frac")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    test = np.sort(rng.choice(len(cloud), n_test, replace=False))
    keep = np.setdiff1d(np.arange(len(cloud)), test)
    return cloud.take(keep), test


def _combined(train: PointCloud, registered: PointCloud, fixed_only):
    if fixed_only:
        return train.xy, train.z
    return np.vstack([train.xy, registered.xy]), np.concatenate([train.z, registered.z])


def _member(kriger: LocalKriger, q, rng):
    m, v = kriger.predict(q)
    return m + np.sqrt(v) * rng.standard_normal(len(m))


def _perturbed(est, theta):
    return dataclasses.replace(est, theta=theta,
                               theta_hat=unpack(theta, nu=est.theta_hat.cov.nu, center=est.theta_hat.center))


def crossval(fixed: PointCloud, moving: PointCloud, holdout_frac=0.001, method="nonrigid", n_sim=30, seed=0,
             N=None, nx=4, ny=4, overlap=0.5, opts: FitOptions | None = None, kind="gp", k=1000,
             fixed_only=False, workers=1) -> MetricReport:
    """Hold out fixed points, register, krige them back, and score.

    The point prediction uses the fitted registration and covariance
    parameters. Each ensemble member re-draws the registration (rigid: the
    parameter vector from its Hessian covariance; nonrigid: every window's
    parameters, then a conditional draw of each GP surface given the drawn
    knot values), re-registers, re-kriges, and samples from the kriging
    predictive distribution.
    """
    if method not in ("rigid", "nonrigid"):
        raise ConfigError(f"method must be 'rigid' or 'nonrigid', not {method!r}")
    if n_sim < 2:
        raise ConfigError("n_sim must be at least 2")
    opts = opts or FitOptions()
    N = N or (500 if method == "rigid" else 250)
    config = {"holdout_frac": holdout_frac, "method": method, "n_sim": n_sim, "seed": seed, "N": N,
              "grid": [nx, ny], "overlap": overlap, "surface": kind, "knn": k, "fixed_only": fixed_only,
              "lambda": opts.penalty.lam, "kappa": opts.penalty.kappa, "translation_bound": opts.translation_bound}
    train, test = holdout_split(fixed, holdout_frac, seed)
    q, y = fixed.xy[test], fixed.z[test]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 13]))
    ens = np.empty((len(test), n_sim))

    if method == "rigid":
        reg = register_rigid(train, moving, N, opts, seed)
        est = reg.estimates[0]

        def kcfg(theta):
            return KrigingConfig(k=k, params=MaternParams(*np.exp(theta[4:7])[:2], opts.nu, float(np.exp(theta[6]))),
                                 nu=opts.nu)

        kr = LocalKriger(*_combined(train, reg.registered, fixed_only), kcfg(est.theta))
        pred, _ = kr.predict(q)
        for i in range(n_sim):
            th = _mvn(rng, est.theta, est.param_cov, est.bounds)
            p = unpack(th, nu=opts.nu, center=est.theta_hat.center)
            reg_i = rigid_field(p, moving.xy).apply(moving)
            ens[:, i] = _member(LocalKriger(*_combined(train, reg_i, fixed_only), kcfg(th)), q, rng)
    else:
        reg = register_nonrigid(train, moving, nx, ny, overlap, N, opts, kind=kind, seed=seed,
                                workers=workers, include_cov=True)
        fld = reg.field
        kr = LocalKriger(*_combined(train, reg.registered, fixed_only),
                         KrigingConfig(k=k, surfaces=fld.surfaces, nu=opts.nu))
        pred, _ = kr.predict(q)
        ests = [e for e in reg.estimates if e.converged] or reg.estimates
        centers = np.array([e.center for e in ests])
        _, noise = knot_values(ests, include_cov=True)
        sims = {name: s.simulator(moving.xy) for name, s in fld.surfaces.items() if isinstance(s, GPSurface)}
        for i in range(n_sim):
            drawn = [_perturbed(e, _mvn(rng, e.theta, e.param_cov, e.bounds)) for e in ests]
            vals, _ = knot_values(drawn, include_cov=True)
            out, surfs = {}, {}
            for name, s in fld.surfaces.items():
                if name in sims:
                    surfs[name] = s.with_values(vals[name])
                    out[name] = sims[name].draw(rng, vals[name])
                else:
                    surfs[name] = fit_surface(s.kind, centers, vals[name], noise[name])
                    out[name] = surfs[name].predict(moving.xy)
            f_i = NonrigidField.from_displacement(moving.xy, out["t_x"], out["t_y"], out["mu_z"], out["phi"])
            kr_i = LocalKriger(*_combined(train, f_i.apply(moving), fixed_only),
                               KrigingConfig(k=k, surfaces=surfs, nu=opts.nu))
            ens[:, i] = _member(kr_i, q, rng)

    return MetricReport(rmse(y, pred), crps_ensemble(ens, y), len(test), n_sim, method, config,
                        predictions=pred, ensemble=ens, truth=y)


__all__ = ["rmse", "nrmse", "crps_ensemble", "crossval", "holdout_split", "MetricReport", "PARAM_NAMES"]
