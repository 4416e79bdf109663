"""Sparse PCA with stochastic row sampling.

Minimizes ``-tr(X^T A^T A X) + rho ||X||_1`` over 20 x 2 orthonormal frames,
comparing the three step-size schedules over 10 runs each.
"""

import numpy as np

from rsgd.diagnostics import decile_medians, distance_to_known_solution, trend_report
from rsgd.objectives import SparsePCA, random_sparse_pca_matrix
from rsgd.optimizer import Constant, Regime1, Regime2, RunConfig, multi_run

A = random_sparse_pca_matrix(20, seed=0)

schedules = {
    "regime 1 (s0=1, c=1e-4)": Regime1(1.0, 1e-4),
    "regime 2 (a=1, b=1)": Regime2(1.0, 1.0),
    "constant 1e-2": Constant(1e-2),
}

for rho in (1.0, 0.0):
    obj = SparsePCA(A, rho=rho, p=2)
    print(f"\nrho = {rho}")
    for label, sched in schedules.items():
        res = multi_run(RunConfig(sched, 2000, seed=0, eval_every=20), obj, n_runs=10)
        stats = trend_report(res)
        loss = res.stats["full_loss"]["mean"]
        first, last = decile_medians(res.stats["rgrad_norm"]["mean"])
        print(f"  {label:26s} loss {loss[0]:8.3f} -> {loss[-1]:8.3f}   "
              f"rgrad deciles {first:.3f} -> {last:.3f}   {stats.verdict}")
        if rho == 0:
            # without the penalty the minimizers span the dominant eigenspace
            d = np.mean([distance_to_known_solution(obj, t.final_point) for t in res.traces])
            print(f"  {'':26s} mean sine of largest principal angle to the solution: {d:.3f}")
