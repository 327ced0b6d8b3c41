"""A miniature version of the replicated recovery study.

Mean NRMSE of the x deformation for a coarse and a fine window grid over a
few replicates. The full study uses 10,000-point surfaces and more seeds
(``gpreg simulate --table 2``).
"""

from gpreg.experiments import run_table, table2_scenarios
from gpreg.windowing import FitOptions

scenarios = table2_scenarios(grids=(3, 5), subsamples=(25, 100))
result = run_table(scenarios, seeds=range(2), opts=FitOptions(n_starts=1), n_points=4000,
                   progress=lambda r: print(f"  {r['scenario']} seed {r['seed']}: {r['nrmse_x']:.3f}"))
print("\nmeans")
for row in result.means():
    print(f"  {row['grid']}x{row['grid']} N={row['N']:<4d} NRMSE_x {row['nrmse_x']:.3f}")
