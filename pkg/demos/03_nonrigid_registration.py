"""Nonrigid registration: moving-window rigid fits smoothed into a deformation field.

A smooth Matérn deformation is applied to the x coordinate of the moving
half; the recovered field is compared with the truth point by point.
"""

import numpy as np

from gpreg.evaluation import nrmse
from gpreg.experiments import DOMAIN, synthetic_pair
from gpreg.pipeline import register_nonrigid
from gpreg.synth import DeformSpec, apply_deform
from gpreg.windowing import FitOptions

fixed, moving = synthetic_pair(seed=4, n=4000)
deformed, truth = apply_deform(moving, DeformSpec("matern", ("x",), seed=4), DOMAIN)
print(f"applied x shifts range from {truth.params['x'].min():+.3f} to {truth.params['x'].max():+.3f} m")

reg = register_nonrigid(fixed, deformed, nx=4, ny=4, overlap=0.5, N=100, opts=FitOptions(n_starts=1), kind="tps")
print(f"{len(reg.estimates)} windows fitted, {sum(e.converged for e in reg.estimates)} converged")

for e in reg.estimates[:4]:
    print(f"  window {e.k:2d} at ({e.center[0]:.2f}, {e.center[1]:.2f}): r_x {e.theta[0]:+.3f}")

scores = nrmse(truth.truth_matrix(), reg.field.estimated_deformation(), ("x",))
print("NRMSE by coordinate:", {k: round(v, 3) for k, v in scores.items()})

back = reg.registered.xy - moving.xy
print(f"RMS planar residual after registration: {np.sqrt(np.mean(back ** 2)):.4f} m "
      f"(before: {np.sqrt(np.mean(truth.displacement ** 2)):.4f} m)")
