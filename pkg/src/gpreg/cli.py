"""``gpreg`` command-line interface.

Settings come from, in increasing priority: built-in defaults, a named
preset, an optional JSON ``--config`` file, and explicit flags. The merged
configuration is validated before any work starts and echoed in every report.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GPRegError, InputOutputError, NumericalError
from .evaluation import crossval
from .experiments import (Scenario, run_table, synthetic_pair, table1_scenarios, table2_scenarios,
                          table2_trend_violations)
from .pipeline import register_nonrigid, register_rigid
from .pointcloud import BBox, read_cloud, write_cloud
from .surface import field_from_surfaces, surface_from_json, surfaces_to_json
from .synth import DeformSpec, apply_deform
from .transform import PARAM_NAMES, PHI_BOUNDS, PenaltyConfig
from .windowing import FitOptions, estimates_table

log = logging.getLogger("gpreg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

PRESETS = {
    # simulation-study settings
    "sim": {"grid": [4, 4], "overlap": 0.5, "subsamples": 100, "lam": 5.0, "kappa": 100.0,
            "translation_bound": 1.0},
    # field-data settings
    "data": {"grid": [4, 12], "overlap": 0.66, "subsamples": 250, "lam": 5.0, "kappa": 100.0,
             "translation_bound": 1.2},
}


@dataclass
class RunConfig:
    command: str = ""
    fixed: str | None = None
    moving: str | None = None
    out: str = "gpreg-out"
    preset: str = "sim"
    grid: list = field(default_factory=lambda: [4, 4])
    overlap: float = 0.5
    subsamples: int = 100
    rigid_subsamples: int = 500
    lam: float = 5.0
    kappa: float = 100.0
    translation_bound: float = 1.0
    n_starts: int = 3
    surface: str = "tps"
    knn: int = 1000
    fixed_only: bool = False
    holdout: float = 0.001
    method: str = "nonrigid"
    n_sim: int = 30
    seed: int = 0
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    surfaces: str | None = None
    table: int = 2
    reps: int = 30
    grids: list = field(default_factory=lambda: [3, 5, 7])
    subsample_list: list = field(default_factory=lambda: [25, 50, 100, 200])
    check_trend: bool = False
    emit_clouds: bool = False
    n_points: int = 10_000
    crop: list | None = None

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.preset in PRESETS, f"unknown preset {self.preset!r}")
        need(len(self.grid) == 2 and all(int(g) >= 1 for g in self.grid), "grid must be NXxNY with NX, NY >= 1")
        need(0.0 <= self.overlap <= 0.9, "overlap must lie in [0, 0.9]")
        need(self.subsamples >= 1 and self.rigid_subsamples >= 1, "subsample counts must be positive")
        need(self.lam >= 0 and self.kappa >= 0, "penalty weights must be non-negative")
        need(self.translation_bound > 0, "translation bound must be positive")
        need(self.n_starts >= 1, "n_starts must be at least 1")
        need(self.surface in ("tps", "gp"), "surface must be 'tps' or 'gp'")
        need(self.knn >= 2, "knn must be at least 2")
        need(0.0 < self.holdout < 1.0, "holdout must lie in (0, 1)")
        need(self.method in ("rigid", "nonrigid"), "method must be 'rigid' or 'nonrigid'")
        need(self.n_sim >= 2, "n_sim must be at least 2")
        need(self.workers >= 1, "workers must be at least 1")
        need(self.table in (1, 2), "table must be 1 or 2")
        need(self.reps >= 1 and self.n_points >= 2, "reps and n_points must be positive")
        if self.command in ("register-rigid", "register-nonrigid", "crossval"):
            need(self.fixed and self.moving, f"{self.command} needs --fixed and --moving")
        if self.crop is not None:
            need(len(self.crop) == 4, "crop must be x_min,x_max,y_min,y_max")
            BBox(*map(float, self.crop))
        if self.command == "predict":
            need(self.surfaces and self.moving, "predict needs --surfaces and --moving")
        return self

    def fit_options(self) -> FitOptions:
        return FitOptions(penalty=PenaltyConfig(self.lam, self.kappa), translation_bound=self.translation_bound,
                          phi_bounds=PHI_BOUNDS, n_starts=self.n_starts)

    def echo(self) -> dict:
        return dataclasses.asdict(self)


def parse_grid(text) -> list:
    try:
        nx, ny = str(text).lower().split("x")
        return [int(nx), int(ny)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 4x4, got {text!r}") from None


def int_list(text) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def float_list(text) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared settings")
    g.add_argument("--config", default=S, help="JSON file of settings; flags override it")
    g.add_argument("--preset", choices=sorted(PRESETS), default=S,
                   help="sim: 4x4 grid, overlap 0.5, N=100; data: 4x12 grid, overlap 0.66, N=250")
    g.add_argument("--fixed", default=S, help="fixed cloud (x y z per line)")
    g.add_argument("--moving", default=S, help="moving cloud (x y z per line)")
    g.add_argument("--out", default=S, help="output directory")
    g.add_argument("--grid", type=parse_grid, default=S, help="window grid, e.g. 4x4")
    g.add_argument("--overlap", type=float, default=S)
    g.add_argument("--subsamples", type=int, default=S, help="points per cloud per window")
    g.add_argument("--rigid-subsamples", dest="rigid_subsamples", type=int, default=S)
    g.add_argument("--lambda", dest="lam", type=float, default=S, help="translation penalty weight")
    g.add_argument("--kappa", type=float, default=S, help="rotation penalty concentration")
    g.add_argument("--translation-bound", dest="translation_bound", type=float, default=S)
    g.add_argument("--starts", dest="n_starts", type=int, default=S, help="optimizer starts per fit")
    g.add_argument("--surface", choices=("tps", "gp"), default=S)
    g.add_argument("--knn", type=int, default=S, help="kriging neighbors")
    g.add_argument("--crop", type=float_list, default=S, help="keep only x_min,x_max,y_min,y_max of both clouds")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--workers", type=int, default=S, help="processes for window fits")
    g.add_argument("-v", "--verbose", action="store_true", default=S)

    p = argparse.ArgumentParser(prog="gpreg", description="Point-cloud registration with GP-embedded likelihood")
    p.add_argument("--version", action="version", version=f"gpreg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("register-rigid", parents=[common], help="one rigid transform for the whole cloud")
    sub.add_parser("register-nonrigid", parents=[common], help="moving-window fits smoothed into a field")
    sp = sub.add_parser("simulate", parents=[common], help="replicated recovery experiments on synthetic data")
    sp.add_argument("--table", type=int, choices=(1, 2), default=S)
    sp.add_argument("--reps", type=int, default=S)
    sp.add_argument("--grids", type=int_list, default=S, help="table 2 grid sizes, e.g. 3,5,7")
    sp.add_argument("--subsample-list", dest="subsample_list", type=int_list, default=S)
    sp.add_argument("--n-points", dest="n_points", type=int, default=S)
    sp.add_argument("--check-trend", dest="check_trend", action="store_true", default=S,
                    help="exit non-zero if table 2 NRMSE fails to decrease")
    sp.add_argument("--emit-clouds", dest="emit_clouds", action="store_true", default=S,
                    help="also write the first replicate's clouds and truth")
    cp = sub.add_parser("crossval", parents=[common], help="hold-out kriging score of a registration")
    cp.add_argument("--holdout", type=float, default=S)
    cp.add_argument("--method", choices=("rigid", "nonrigid"), default=S)
    cp.add_argument("--n-sim", dest="n_sim", type=int, default=S)
    cp.add_argument("--fixed-only", dest="fixed_only", action="store_true", default=S)
    sub.add_parser("predict", parents=[common], help="apply saved surfaces to a cloud").add_argument(
        "--surfaces", default=S, help="surfaces.json from register-nonrigid")
    return p


def load_config(argv=None) -> tuple[RunConfig, bool]:
    ns = vars(build_parser().parse_args(argv))
    verbose = bool(ns.pop("verbose", False))
    merged = {}
    preset = ns.get("preset")
    cfg_path = ns.pop("config", None)
    file_values = {}
    if cfg_path:
        try:
            file_values = json.loads(Path(cfg_path).read_text())
        except OSError as exc:
            raise InputOutputError(f"cannot read config {cfg_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {cfg_path} is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        preset = preset or file_values.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    merged.update(PRESETS.get(preset or "sim", {}))
    merged.update(file_values)
    merged.update(ns)
    if preset:
        merged["preset"] = preset
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown settings {unknown}")
    if isinstance(merged.get("grid"), str):
        merged["grid"] = parse_grid(merged["grid"])
    return RunConfig(**merged).validate(), verbose


class StageError(Exception):
    def __init__(self, stage, exc):
        self.stage, self.exc = stage, exc
        super().__init__(f"[{stage}] {exc}")


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except (GPRegError, OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_csv(path, rows):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})


def _report(cfg, **body):
    # the timestamp is the only field allowed to differ between identical runs
    return {"command": cfg.command, "config": cfg.echo(), **body, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_registration(cfg, reg, out, surfaces=True):
    write_cloud(reg.registered, out / "registered.xyz")
    _write_csv(out / "window_estimates.csv", estimates_table(reg.fits))
    _write_csv(out / "field.csv", reg.field.rows())
    if surfaces:
        _write_json(out / "surfaces.json", surfaces_to_json(reg.field.surfaces))


def _read_pair(cfg):
    fixed, moving = read_cloud(cfg.fixed, "fixed"), read_cloud(cfg.moving, "moving")
    if cfg.crop:
        box = BBox(*cfg.crop)
        fixed, moving = fixed.crop(box), moving.crop(box)
    return fixed, moving


def cmd_register_rigid(cfg: RunConfig) -> dict:
    with stage("read"):
        fixed, moving = _read_pair(cfg)
    with stage("fit"):
        reg = register_rigid(fixed, moving, cfg.rigid_subsamples, cfg.fit_options(), cfg.seed)
    est = reg.estimates[0]
    with stage("write"):
        out = _outdir(cfg)
        _write_registration(cfg, reg, out, surfaces=False)
        doc = _report(cfg, estimate={"names": list(PARAM_NAMES), "theta": est.theta, "param_cov": est.param_cov,
                                     "std_errors": est.std_errors, "rotation_center": list(est.theta_hat.center),
                                     "converged": est.converged, "degenerate": est.degenerate, "nll": est.nll})
        _write_json(out / "report.json", doc)
    return doc


def cmd_register_nonrigid(cfg: RunConfig) -> dict:
    with stage("read"):
        fixed, moving = _read_pair(cfg)
    with stage("fit"):
        reg = register_nonrigid(fixed, moving, cfg.grid[0], cfg.grid[1], cfg.overlap, cfg.subsamples,
                                cfg.fit_options(), kind=cfg.surface, seed=cfg.seed, workers=cfg.workers,
                                include_cov=True)
    with stage("write"):
        out = _outdir(cfg)
        _write_registration(cfg, reg, out)
        doc = _report(cfg, n_windows=len(reg.grid), n_estimates=len(reg.estimates),
                      n_converged=int(sum(e.converged for e in reg.estimates)),
                      skipped=[{"k": k, "reason": why} for k, why in reg.fits.skipped],
                      window_size=[reg.grid.width, reg.grid.height])
        _write_json(out / "report.json", doc)
    return doc


def cmd_simulate(cfg: RunConfig) -> dict:
    if cfg.table == 1:
        scenarios = table1_scenarios(grid=cfg.grid[0], N=cfg.subsamples)
    else:
        scenarios = table2_scenarios(cfg.grids, cfg.subsample_list)
    seeds = [cfg.seed + r for r in range(cfg.reps)]
    with stage("simulate"):
        result = run_table(scenarios, seeds, cfg.fit_options(), cfg.n_points, cfg.workers,
                           progress=lambda r: log.info("%s seed %d: NRMSE_x %.3f", r["scenario"], r["seed"],
                                                       r["nrmse_x"]))
    out = _outdir(cfg)
    with stage("write"):
        _write_csv(out / f"table{cfg.table}.csv", result.means())
        _write_csv(out / f"table{cfg.table}_replicates.csv", result.replicates)
        doc = _report(cfg, **result.to_json())
        if cfg.table == 2:
            doc["trend_violations"] = table2_trend_violations(result)
        _write_json(out / "report.json", doc)
        if cfg.emit_clouds:
            fixed, moving = synthetic_pair(seeds[0], cfg.n_points)
            scn: Scenario = scenarios[0]
            deformed, truth = apply_deform(moving, DeformSpec(scn.kind, scn.applied_to, seed=seeds[0]))
            write_cloud(fixed, out / "fixed.xyz")
            write_cloud(deformed, out / "moving.xyz")
            _write_json(out / "truth.json", truth.to_json())
    if cfg.table == 2 and cfg.check_trend and doc["trend_violations"]:
        raise StageError("trend", NumericalError("; ".join(doc["trend_violations"])))
    return doc


def cmd_crossval(cfg: RunConfig) -> dict:
    with stage("read"):
        fixed, moving = _read_pair(cfg)
    with stage("crossval"):
        rep = crossval(fixed, moving, cfg.holdout, cfg.method, cfg.n_sim, cfg.seed,
                       N=cfg.rigid_subsamples if cfg.method == "rigid" else cfg.subsamples,
                       nx=cfg.grid[0], ny=cfg.grid[1], overlap=cfg.overlap, opts=cfg.fit_options(),
                       kind=cfg.surface, k=cfg.knn, fixed_only=cfg.fixed_only, workers=cfg.workers)
    with stage("write"):
        out = _outdir(cfg)
        doc = _report(cfg, **rep.to_json())
        _write_json(out / "report.json", doc)
        rows = [{"i": i, "truth": rep.truth[i], "prediction": rep.predictions[i],
                 **{f"sim_{j}": rep.ensemble[i, j] for j in range(rep.ensemble.shape[1])}}
                for i in range(rep.n_test)]
        _write_csv(out / "ensemble.csv", rows)
    print(f"{'method':<10}{'rmse':>12}{'crps':>12}{'n_test':>8}")
    print(f"{rep.method:<10}{rep.rmse:>12.6f}{rep.crps:>12.6f}{rep.n_test:>8d}")
    return doc


def cmd_predict(cfg: RunConfig) -> dict:
    with stage("read"):
        moving = read_cloud(cfg.moving, "moving")
        try:
            doc = json.loads(Path(cfg.surfaces).read_text())
        except OSError as exc:
            raise InputOutputError(str(exc)) from exc
        surfaces = {name: surface_from_json(d) for name, d in doc.items()}
    with stage("predict"):
        fld = field_from_surfaces(surfaces, moving.xy)
        registered = fld.apply(moving)
    with stage("write"):
        out = _outdir(cfg)
        write_cloud(registered, out / "registered.xyz")
        _write_csv(out / "field.csv", fld.rows())
        rep = _report(cfg, n_points=len(moving))
        _write_json(out / "report.json", rep)
    return rep


COMMANDS = {"register-rigid": cmd_register_rigid, "register-nonrigid": cmd_register_nonrigid,
            "simulate": cmd_simulate, "crossval": cmd_crossval, "predict": cmd_predict}


def exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError) or isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_CONFIG


def main(argv=None) -> int:
    try:
        cfg, verbose = load_config(argv)
    except GPRegError as exc:
        print(f"gpreg: error [config]: {exc}", file=sys.stderr)
        return exit_code(exc)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[cfg.command](cfg)
    except StageError as err:
        print(f"gpreg: error [{err.stage}]: {err.exc}", file=sys.stderr)
        return exit_code(err.exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
