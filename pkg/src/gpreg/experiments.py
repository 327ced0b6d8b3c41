"""Replicated deformation-recovery experiments on simulated terrain.

A replicate simulates one Matérn surface, splits it into fixed and moving
halves, de-registers the moving half with a known deformation, registers it
back and scores the recovered deformation with :func:`~gpreg.evaluation.nrmse`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .covariance import MaternParams
from .evaluation import nrmse
from .pipeline import register_nonrigid
from .pointcloud import BBox
from .synth import COORDS, DeformSpec, apply_deform, simulate_gp_cloud, split_cloud
from .windowing import FitOptions

TERRAIN = MaternParams(sigma2=2.5, a=3.0, nu=1.0, tau2=1e-4)
DOMAIN = BBox(0.0, 6.0, 0.0, 6.0)
X_ONLY_FREE = ("r_x", "log_sigma2", "log_a", "log_tau2")


@dataclass(frozen=True)
class Scenario:
    kind: str
    applied_to: tuple
    grid: int = 4
    N: int = 100
    x_only_model: bool = False
    surface: str = "tps"
    overlap: float = 0.5

    @property
    def label(self) -> str:
        return f"{self.kind}:{''.join(self.applied_to)}:{self.grid}x{self.grid}:N{self.N}"

    def fit_options(self, base: FitOptions | None = None) -> FitOptions:
        base = base or FitOptions()
        if self.x_only_model:
            return replace(base, free=X_ONLY_FREE)
        return base


def synthetic_pair(seed, n=10_000, box=DOMAIN, terrain=TERRAIN):
    """Undeformed ``(fixed, moving)`` halves of one simulated surface."""
    return split_cloud(simulate_gp_cloud(n, box, terrain, seed), seed)


def run_replicate(fixed, moving, scn: Scenario, seed, opts: FitOptions | None = None, box=DOMAIN,
                  workers=1) -> dict:
    deformed, truth = apply_deform(moving, DeformSpec(scn.kind, scn.applied_to, seed=seed), box)
    t0 = time.perf_counter()
    reg = register_nonrigid(fixed, deformed, scn.grid, scn.grid, scn.overlap, scn.N, scn.fit_options(opts),
                            kind=scn.surface, seed=seed, workers=workers)
    scores = nrmse(truth.truth_matrix(), reg.field.estimated_deformation(), scn.applied_to)
    return {"scenario": scn.label, "seed": seed, **{f"nrmse_{c}": scores[c] for c in COORDS},
            "n_windows": len(reg.estimates), "n_converged": sum(e.converged for e in reg.estimates),
            "seconds": time.perf_counter() - t0}


@dataclass
class TableResult:
    scenarios: list
    replicates: list = field(default_factory=list)

    def means(self) -> list[dict]:
        out = []
        for scn in self.scenarios:
            rows = [r for r in self.replicates if r["scenario"] == scn.label]
            row = {"scenario": scn.label, "kind": scn.kind, "applied_to": "".join(scn.applied_to),
                   "grid": scn.grid, "N": scn.N, "n_reps": len(rows)}
            for c in COORDS:
                row[f"nrmse_{c}"] = float(np.mean([r[f"nrmse_{c}"] for r in rows])) if rows else np.nan
            out.append(row)
        return out

    def mean_of(self, scn: Scenario, coord="x") -> float:
        return next(r[f"nrmse_{coord}"] for r in self.means() if r["scenario"] == scn.label)

    def to_json(self) -> dict:
        return {"scenarios": [asdict(s) for s in self.scenarios], "means": self.means(),
                "replicates": self.replicates}


def run_table(scenarios, seeds, opts: FitOptions | None = None, n_points=10_000, workers=1,
              progress=None) -> TableResult:
    """Every scenario on every seed; each seed's surface is simulated once and shared."""
    result = TableResult(list(scenarios))
    for seed in seeds:
        fixed, moving = synthetic_pair(seed, n_points)
        for scn in scenarios:
            row = run_replicate(fixed, moving, scn, seed, opts, workers=workers)
            result.replicates.append(row)
            if progress:
                progress(row)
    return result


def table1_scenarios(kinds=("quadratic", "matern"), rows=(("x",), ("z",), ("phi",), ("x", "y", "z"),
                                                          ("x", "y", "z", "phi")), grid=4, N=100):
    return [Scenario(k, tuple(a), grid, N) for k in kinds for a in rows]


def table2_scenarios(grids=(3, 5, 7), subsamples=(25, 50, 100, 200)):
    return [Scenario("matern", ("x",), g, n, x_only_model=True) for g in grids for n in subsamples]


def table2_trend_violations(result: TableResult) -> list[str]:
    """Cells where NRMSE_x fails to drop when the grid or the subsample count grows."""
    means = {(r["grid"], r["N"]): r["nrmse_x"] for r in result.means()}
    grids = sorted({g for g, _ in means})
    ns = sorted({n for _, n in means})
    bad = []
    for g in grids:
        for a, b in zip(ns, ns[1:]):
            if means[(g, b)] > means[(g, a)]:
                bad.append(f"grid {g}: N={b} ({means[(g, b)]:.3f}) > N={a} ({means[(g, a)]:.3f})")
    for n in ns:
        for a, b in zip(grids, grids[1:]):
            if means[(b, n)] > means[(a, n)]:
                bad.append(f"N={n}: grid {b} ({means[(b, n)]:.3f}) > grid {a} ({means[(a, n)]:.3f})")
    return bad
