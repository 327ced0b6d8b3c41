"""Hold-out prediction scores for rigid and nonrigid registration.

Fixed points are held out, the rest are registered with the moving cloud,
and the held-out elevations are predicted by local kriging. CRPS comes from
an ensemble that propagates the registration uncertainty.
"""

from gpreg.evaluation import crossval
from gpreg.experiments import DOMAIN, synthetic_pair
from gpreg.synth import DeformSpec, apply_deform
from gpreg.windowing import FitOptions

fixed, moving = synthetic_pair(seed=0, n=4000)
deformed, _ = apply_deform(moving, DeformSpec("matern", ("x", "y", "z"), seed=0), DOMAIN)
opts = FitOptions(n_starts=1)

print(f"{'method':<10}{'rmse':>10}{'crps':>10}")
for method, N in (("rigid", 500), ("nonrigid", 100)):
    rep = crossval(fixed, deformed, holdout_frac=0.02, method=method, n_sim=10, seed=0, N=N, k=200,
                   kind="gp", opts=opts)
    print(f"{method:<10}{rep.rmse:>10.4f}{rep.crps:>10.4f}")
