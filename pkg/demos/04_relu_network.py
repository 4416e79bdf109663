"""A ReLU regression network whose hidden neurons live on spheres.

Uses the small LIBSVM fixture shipped with the tests; pass another LIBSVM
file (for example the bodyfat data) as the first argument.
"""

import sys
from pathlib import Path

import numpy as np

from rsgd.diagnostics import decile_medians
from rsgd.objectives import ReluNet, parse_libsvm
from rsgd.optimizer import Constant, Regime1, Regime2, RunConfig, multi_run

path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parents[1] / "tests/data/synthetic_N64_d14_seed0.libsvm"
data = parse_libsvm(path, standardize=True)
print(f"{path.name}: N={data.n_samples}, d={data.n_features}")

net = ReluNet(data, widths=[3, 3, 3], batch_size=min(16, data.n_samples))
print("parameter blocks:", len(net.manifold.factors), "total dimension:", net.manifold.dim)

for sched in (Regime1(0.052, 0.00325), Regime2(0.052, 0.7), Constant(1e-2)):
    res = multi_run(RunConfig(sched, 2000, seed=0, eval_every=20), net, n_runs=5)
    first, last = decile_medians(res.stats["full_loss"]["mean"])
    worst = max(abs(np.linalg.norm(w) - 1) for t in res.traces for w in t.final_point[:-1])
    print(f"{sched.label:28s} training loss {first:.4f} -> {last:.4f}   unit-norm defect {worst:.1e}")
