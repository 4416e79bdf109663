"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or ``python3 tests/test_acceptance.py``.

Set ``RSGD_SLOW=1`` for the paper-scale runs and ``RSGD_BODYFAT=<path>`` to
point the ReLU test at a user-supplied LIBSVM ``bodyfat`` file.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import FIXTURE  # noqa: E402
from rsgd.diagnostics import decile_medians, distance_to_known_solution, running_min  # noqa: E402
from rsgd.geometry import FixedRank, Sphere, Stiefel  # noqa: E402
from rsgd.objectives import (  # noqa: E402
    L1Objective,
    MatrixCompletion,
    ReluNet,
    SparsePCA,
    WrongSignSubgradient,
    parse_libsvm,
    random_completion_matrix,
    random_sparse_pca_matrix,
)
from rsgd.optimizer import Constant, Regime1, Regime2, RunConfig, multi_run, rsgd_step, run  # noqa: E402
from rsgd.seeding import make_rng  # noqa: E402
from rsgd.theory_checks import (  # noqa: E402
    CurveSpec,
    ScaledRetraction,
    check_chain_rule,
    check_grad_ae,
    check_loop_integral,
    check_retraction_axioms,
    orthant_points,
)

RESULTS: dict = {}
SLOW = os.environ.get("RSGD_SLOW") == "1"


def report(num: int, title: str, ok: bool, detail: str, elapsed: float, limit: float):
    ok = bool(ok and elapsed <= limit)
    line = f"criterion {num} {'PASS' if ok else 'FAIL'}: {title} | {detail} | {elapsed:.1f}s (limit {limit:.0f}s)"
    RESULTS[num] = line
    print(line)
    return ok


# -- 1. geometry --------------------------------------------------------------


def test_criterion_1_geometry():
    t0 = time.perf_counter()
    rng = make_rng(1)
    manifolds = [Sphere(10), Stiefel(10, 3), FixedRank(20, 20, 3)]
    axioms = [check_retraction_axioms(m, 5, 3, rng) for m in manifolds]
    zero_exact = all(d["zero_defect"] == 0 for r in axioms for d in r.details)
    min_slope = min(d["slope"] for r in axioms for d in r.details)

    single = 0.0
    for m in manifolds:
        for _ in range(20):
            x = m.random_point(rng)
            single = max(single, m.membership_defect(x))
            single = max(single, m.membership_defect(m.retract(x, m.random_tangent(x, rng, 1.0))))
            single = max(single, m.membership_defect(m.renormalize(x)))
            if m.has_exp:
                single = max(single, m.membership_defect(m.exp_map(x, m.random_tangent(x, rng, 3.0))))

    long = {}
    sphere_obj = SparsePCA(random_sparse_pca_matrix(10, 1), rho=0.5, p=1, on_sphere=True)
    stiefel_obj = SparsePCA(random_sparse_pca_matrix(10, 1), rho=0.5, p=3)
    mc_obj = MatrixCompletion(random_completion_matrix(20, 20, 3, 1), p=3, sigma=1e-3)
    for name, obj in (("sphere", sphere_obj), ("stiefel", stiefel_obj), ("fixedrank", mc_obj)):
        tr = run(RunConfig(Constant(1e-2 if name != "fixedrank" else 1e-3), 10_000, seed=1, eval_every=10_000), obj)
        long[name] = tr.meta["feasibility_defect"]
    elapsed = time.perf_counter() - t0

    ok = all(r.passed for r in axioms) and zero_exact and min_slope >= 1.9 and single <= 1e-10
    ok = ok and max(long.values()) <= 1e-8
    detail = (f"zero-law exact={zero_exact}, min slope={min_slope:.3f} (>=1.9), single-op defect={single:.1e} (<=1e-10), "
              + ", ".join(f"{k} 1e4-step defect={v:.1e}" for k, v in long.items()) + " (<=1e-8)")
    assert report(1, "geometry suite", ok, detail, elapsed, 30)


# -- 2. tame-analysis suite ---------------------------------------------------


def test_criterion_2_tame_analysis():
    t0 = time.perf_counter()
    rng = make_rng(2)
    pca = SparsePCA(random_sparse_pca_matrix(10, 2), rho=0.0, p=3)
    st = pca.manifold
    smooth = []
    for _ in range(3):
        x = st.random_point(rng)
        smooth.append(check_chain_rule(pca, CurveSpec.retraction_curve(st, x, st.random_tangent(x, rng, 1.0), 64)))
        smooth.append(check_chain_rule(pca, CurveSpec.piecewise(st, [st.random_point(rng) for _ in range(3)], 64)))
    smooth_all = all(r.statistic == 0 for r in smooth)
    smooth_worst = max(r.extra["max_node_defect"] for r in smooth)

    sphere = Sphere(3)
    l1 = L1Objective(sphere)
    l1_reports = [check_chain_rule(l1, CurveSpec.piecewise(sphere, orthant_points(3, 4, rng)))]
    for _ in range(3):
        x = sphere.random_point(rng)
        l1_reports.append(check_chain_rule(l1, CurveSpec.retraction_curve(sphere, x, sphere.random_tangent(x, rng, 2 * np.pi), 200)))
    l1_worst = max(r.statistic for r in l1_reports)

    loops = [check_loop_integral(pca, CurveSpec.loop(st, [st.random_point(rng) for _ in range(3)])) for _ in range(2)]
    loops.append(check_loop_integral(l1, CurveSpec.loop(sphere, orthant_points(3, 4, rng))))
    loop_ratio = max(r.statistic / r.tolerance for r in loops)

    mc = MatrixCompletion(random_completion_matrix(10, 10, 2, 2), p=2, sigma=0.0)
    gae = check_grad_ae(mc, 40, rng)
    elapsed = time.perf_counter() - t0

    ok = smooth_all and smooth_worst <= 1e-5 and l1_worst <= 0.05 and all(r.passed for r in loops)
    ok = ok and 1 - gae.statistic >= 0.95
    detail = (f"smooth chain rule all nodes={smooth_all} (worst {smooth_worst:.1e} <=1e-5), l1 fail fraction={l1_worst:.3f} (<=0.05), "
              f"loop |I|/tol max={loop_ratio:.2e} (<=1), grad a.e. pass={1 - gae.statistic:.2%} (>=95%)")
    assert report(2, "tame-analysis suite", ok, detail, elapsed, 120)


# -- 3. unbiasedness ----------------------------------------------------------


def test_criterion_3_unbiasedness():
    t0 = time.perf_counter()
    rng = make_rng(3)
    obj = SparsePCA(random_sparse_pca_matrix(5, 3), rho=0.0, p=2)
    brute = 0.0
    for _ in range(5):
        X = obj.manifold.random_point(rng)
        mean_g = sum(w * obj.stoch_subgrad(X, s) for s, w in obj.samples())
        brute = max(brute, float(np.max(np.abs(mean_g - obj.full_subgrad(X)))))

    sph = SparsePCA(random_sparse_pca_matrix(5, 4), rho=0.0, p=1, on_sphere=True)
    s5 = sph.manifold
    x = s5.random_point(rng)
    alpha = 1e-3
    trials = np.array([rsgd_step(s5, sph, x, 0, alpha, rng)[0] for _ in range(1000)])
    target = s5.exp_map(x, -alpha * s5.tangent_project(x, sph.full_subgrad(x)))
    se = trials.std(axis=0, ddof=1) / np.sqrt(len(trials))
    z = float(np.max(np.abs(trials.mean(axis=0) - target) / se))
    elapsed = time.perf_counter() - t0

    ok = brute <= 1e-10 and z <= 4
    detail = f"brute-force gradient error={brute:.1e} (<=1e-10), single-step mean max |z|={z:.2f} (<=4 SE, 1000 trials)"
    assert report(3, "unbiasedness", ok, detail, elapsed, 60)


# -- 4. sparse PCA ------------------------------------------------------------

PCA_SCHEDULES = {"regime1": Regime1(1.0, 1e-4), "regime2": Regime2(1.0, 1.0), "constant": Constant(1e-2)}


def pca_problem():
    return SparsePCA(random_sparse_pca_matrix(20, 0), rho=1.0, p=2)


def pca_run(sched, n_runs=10):
    return multi_run(RunConfig(sched, 2000, seed=0, eval_every=20), pca_problem(), n_runs)


def test_criterion_4_sparse_pca():
    t0 = time.perf_counter()
    ratios, monotone = {}, True
    for name, sched in PCA_SCHEDULES.items():
        res = pca_run(sched)
        assert res.n_success == 10
        for tr in res.traces:
            rm = running_min(tr.full_loss)
            monotone &= bool(np.all(rm[1:] <= rm[:-1]))
        first, last = decile_medians(res.stats["rgrad_norm"]["mean"])
        ratios[name] = last / first
    elapsed = time.perf_counter() - t0

    decreasing = sum(r <= 0.2 for r in ratios.values())
    ok = monotone and decreasing >= 2
    detail = (f"running min nonincreasing={monotone}, rgrad last/first decile "
              + ", ".join(f"{k}={v:.3f}" for k, v in ratios.items()) + f" ({decreasing}/3 <= 0.2, need 2)")
    assert report(4, "sparse PCA n=20", ok, detail, elapsed, 120)


# -- 5. matrix completion -----------------------------------------------------

MC_SCHEDULES = {
    "regime1_s0=10": Regime1(10.0, 1e-4),
    "regime2_a=10": Regime2(10.0, 1.0),
    "regime2_a=0.01_b=0.75": Regime2(0.01, 0.75),
    "constant_1e-2": Constant(1e-2),
    "constant_1e-3": Constant(1e-3),
    "constant_1e-4": Constant(1e-4),
}


def mc_problem(sigma):
    return MatrixCompletion(random_completion_matrix(20, 20, 3, 0), p=3, sigma=sigma)


def test_criterion_5_matrix_completion():
    t0 = time.perf_counter()
    obj = mc_problem(1e-3)
    ratios = {}
    for name, sched in MC_SCHEDULES.items():
        res = multi_run(RunConfig(sched, 2000, seed=0, eval_every=20), obj, 3)
        if res.n_success:
            fl = res.stats["full_loss"]["mean"]
            ratios[name] = fl[-1] / fl[0]
    best = min(ratios, key=ratios.get)

    exact = mc_problem(0.0)
    tr = run(RunConfig(Constant(1e-3), 2000, seed=0, eval_every=2000), exact)
    x0 = exact.manifold.random_point(make_rng(_init_seed(0)))
    d0 = distance_to_known_solution(exact, x0)
    d1 = distance_to_known_solution(exact, tr.final_point)
    elapsed = time.perf_counter() - t0

    ok = ratios[best] <= 0.1 and d1 <= 0.5 * d0
    detail = (f"best schedule {best}: final/initial loss={ratios[best]:.4f} (<=0.1); "
              f"sigma=0 distance {d0:.3f} -> {d1:.4f} (decrease {1 - d1 / d0:.1%}, need >=50%)")
    assert report(5, "matrix completion 20x20 rank 3", ok, detail, elapsed, 120)


def _init_seed(seed):
    from rsgd.seeding import derive_seeds
    return derive_seeds(seed, 2)[0]


# -- 6. ReLU network ----------------------------------------------------------

RELU_SCHEDULE = Regime1(0.052, 0.00325)


def relu_problem(path=FIXTURE, batch=16):
    return ReluNet(parse_libsvm(path, standardize=True), [3, 3, 3], batch_size=batch)


def test_criterion_6_relu_net():
    t0 = time.perf_counter()
    obj = relu_problem()
    res = multi_run(RunConfig(RELU_SCHEDULE, 2000, seed=0, eval_every=20), obj, 5)
    first, last = decile_medians(res.stats["full_loss"]["mean"])
    feas = 0.0
    n_sph = sum(w for w in obj.widths)
    for tr in res.traces:
        feas = max(feas, max(abs(np.linalg.norm(w) - 1) for w in tr.final_point[:n_sph]))
    elapsed = time.perf_counter() - t0

    ok = res.n_success == 5 and last < first and feas <= 1e-8
    detail = (f"loss decile medians {first:.4f} -> {last:.4f} (need decrease), "
              f"max unit-norm defect={feas:.1e} (<=1e-8), {res.n_success}/5 runs")
    assert report(6, "ReLU net on LIBSVM fixture", ok, detail, elapsed, 120)


# -- 7. determinism -----------------------------------------------------------


def test_criterion_7_determinism():
    t0 = time.perf_counter()
    cases = {
        "sparse_pca": (RunConfig(PCA_SCHEDULES["regime2"], 2000, seed=0, eval_every=20), pca_problem()),
        "completion": (RunConfig(Constant(1e-3), 2000, seed=0, eval_every=20), mc_problem(1e-3)),
        "relu": (RunConfig(RELU_SCHEDULE, 2000, seed=0, eval_every=20), relu_problem()),
    }
    same = {}
    for name, (cfg, obj) in cases.items():
        a = multi_run(cfg, obj, 2)
        b = multi_run(cfg, obj, 2, workers=2)
        same[name] = [t.to_csv().encode() for t in a.traces] == [t.to_csv().encode() for t in b.traces]
        same[name] &= a.aggregate_csv() == b.aggregate_csv()
    elapsed = time.perf_counter() - t0
    ok = all(same.values())
    detail = ", ".join(f"{k} byte-identical={v}" for k, v in same.items())
    assert report(7, "determinism", ok, detail, elapsed, 120)


# -- 8. negative controls -----------------------------------------------------


def test_criterion_8_negative_controls():
    t0 = time.perf_counter()
    rng = make_rng(8)
    corrupt = [check_retraction_axioms(m, 3, 2, rng, retract=ScaledRetraction(m))
               for m in (Sphere(10), Stiefel(10, 3), FixedRank(20, 20, 3))]
    pca = SparsePCA(random_sparse_pca_matrix(10, 8), rho=0.0, p=3)
    st = pca.manifold
    x = st.random_point(rng)
    curve = CurveSpec.retraction_curve(st, x, st.random_tangent(x, rng, 1.0))
    honest = check_chain_rule(pca, curve)
    wrong = check_chain_rule(WrongSignSubgradient(pca), curve)
    elapsed = time.perf_counter() - t0

    ok = not any(r.passed for r in corrupt) and honest.passed and not wrong.passed
    detail = (f"corrupted retraction failed on {sum(not r.passed for r in corrupt)}/3 manifolds, "
              f"wrong-sign chain-rule fail fraction={wrong.statistic:.2f} (honest {honest.statistic:.2f})")
    assert report(8, "negative controls", ok, detail, elapsed, 60)


# -- optional paper-scale runs ------------------------------------------------


@pytest.mark.slow
@pytest.mark.skipif(not SLOW, reason="set RSGD_SLOW=1 for paper-scale runs")
def test_paper_scale_sparse_pca():
    obj = SparsePCA(random_sparse_pca_matrix(100, 0), rho=1.0, p=2)
    res = multi_run(RunConfig(Regime2(10.0, 1.0), 10_000, seed=0, eval_every=100), obj, 10)
    first, last = decile_medians(res.stats["full_loss"]["mean"])
    assert res.n_success == 10 and last < first


@pytest.mark.slow
@pytest.mark.skipif(not (SLOW and os.environ.get("RSGD_BODYFAT")), reason="set RSGD_SLOW=1 and RSGD_BODYFAT=<path>")
def test_paper_scale_bodyfat():
    obj = relu_problem(os.environ["RSGD_BODYFAT"], batch=64)
    assert (obj.dataset.n_samples, obj.dataset.n_features) == (252, 14)
    res = multi_run(RunConfig(RELU_SCHEDULE, 10_000, seed=0, eval_every=100), obj, 10)
    first, last = decile_medians(res.stats["full_loss"]["mean"])
    assert res.n_success == 10 and last < first


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failed = 0
    for t in tests:
        try:
            t()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
