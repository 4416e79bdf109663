import numpy as np
import pytest

from rsgd.diagnostics import (
    aggregate,
    decile_medians,
    distance_to_known_solution,
    known_solution,
    retracted_grad_norm,
    running_min,
    trend_report,
)
from rsgd.errors import CapabilityError, DimensionError
from rsgd.geometry import Stiefel
from rsgd.objectives import (
    ConstantObjective,
    MatrixCompletion,
    ReluNet,
    SparsePCA,
    random_completion_matrix,
    random_sparse_pca_matrix,
    synthetic_regression,
)
from rsgd.optimizer import Regime2, RunConfig, multi_run, run


def principal_sines(X, Y):
    """Oracle: sines of principal angles from the SVD of Q_x^T Q_y."""
    Qx, Qy = np.linalg.qr(X)[0], np.linalg.qr(Y)[0]
    c = np.clip(np.linalg.svd(Qx.T @ Qy, compute_uv=False), 0, 1)
    return np.sqrt(1 - c**2)


def test_rgrad_zero_at_critical_point():
    A = np.diag([5.0, 4.0, 3.0, 2.0, 1.0])
    obj = SparsePCA(A, rho=0.0, p=2)
    X = np.eye(5)[:, :2]
    assert retracted_grad_norm(obj.manifold, obj, X) <= 1e-8


def test_rgrad_constant_and_random(rng):
    s = Stiefel(6, 2)
    x = s.random_point(rng)
    assert retracted_grad_norm(s, ConstantObjective(s), x) == 0
    obj = SparsePCA(random_sparse_pca_matrix(6, 0), rho=0.0, p=2)
    x = obj.manifold.random_point(rng)
    g = retracted_grad_norm(obj.manifold, obj, x)
    assert g > 0
    # nonstationarity confirmed by a decrease along the negative projected gradient
    v = obj.manifold.tangent_project(x, obj.full_subgrad(x))
    y = obj.manifold.retract(x, -1e-4 * v)
    assert obj.full_value(y) < obj.full_value(x)


def test_principal_angle_example():
    A = np.diag([3.0, 2.0, 1.0])
    obj = SparsePCA(A, rho=0.0, p=1)
    e = np.eye(3)
    assert distance_to_known_solution(obj, e[:, 1:2]) == pytest.approx(1.0, abs=1e-15)
    assert distance_to_known_solution(obj, e[:, 0:1]) == pytest.approx(0.0, abs=1e-15)


def test_subspace_distance_matches_oracle(rng):
    obj = SparsePCA(random_sparse_pca_matrix(7, 2), rho=0.0, p=3)
    sol = known_solution(obj)
    for _ in range(5):
        X = obj.manifold.random_point(rng)
        assert distance_to_known_solution(obj, X) == pytest.approx(principal_sines(X, sol.basis).max(), abs=1e-12)
        # invariant under rotations inside the subspace
        Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        assert distance_to_known_solution(obj, X @ Q) == pytest.approx(distance_to_known_solution(obj, X), abs=1e-12)


def test_completion_solution():
    A = random_completion_matrix(6, 5, 2, 0)
    obj = MatrixCompletion(A, p=2)
    assert distance_to_known_solution(obj, obj.manifold.from_matrix(A)) == pytest.approx(0, abs=1e-12)


def test_unsupported_solutions():
    with pytest.raises(CapabilityError):
        known_solution(SparsePCA(random_sparse_pca_matrix(4, 0), rho=0.5))
    with pytest.raises(CapabilityError):
        known_solution(MatrixCompletion(random_completion_matrix(4, 4, 2, 0), p=2, sigma=0.1))
    with pytest.raises(CapabilityError):
        known_solution(MatrixCompletion(random_completion_matrix(4, 4, 3, 0), p=2))
    with pytest.raises(CapabilityError):
        known_solution(SparsePCA(np.eye(3), rho=0.0, p=1))
    with pytest.raises(CapabilityError):
        known_solution(ReluNet(synthetic_regression(8, 2), [2], batch_size=4))


def test_trend_verdicts():
    dec = trend_report({"loss": np.linspace(10, 1, 50)})
    assert dec.verdict == "converging" and dec.converging
    flat = trend_report({"loss": np.ones(40)})
    assert flat.verdict == "neutral"
    assert flat.trends["loss"]["ratio"] == 1.0
    up = trend_report({"loss": np.linspace(1, 10, 50)})
    assert up.verdict == "not converging"
    with pytest.raises(DimensionError):
        trend_report({"loss": []})


def test_running_min_and_deciles():
    v = np.array([3.0, 4.0, 2.0, 5.0, 1.0])
    assert running_min(v).tolist() == [3, 3, 2, 2, 1]
    first, last = decile_medians(np.arange(100.0))
    assert (first, last) == (4.5, 94.5)


def test_reference_sparse_pca_run_converges():
    obj = SparsePCA(random_sparse_pca_matrix(20, 0), rho=1.0, p=2)
    tr = run(RunConfig(Regime2(1, 1), 2000, eval_every=20), obj)
    rep = trend_report(tr)
    assert rep.trends["loss"]["last_decile_median"] < rep.trends["loss"]["first_decile_median"]
    assert np.all(np.diff(rep.running_min) <= 0)
    assert "k,loss_running_min" in rep.to_csv_columns()


def test_aggregate_bands():
    obj = SparsePCA(random_sparse_pca_matrix(6, 0), rho=0.2, p=2)
    res = multi_run(RunConfig(Regime2(1, 1), 50, eval_every=10), obj, 4)
    rep = trend_report(res)
    assert set(rep.bands) == {"full_loss", "rgrad_norm"}
    agg = aggregate(res.traces)
    assert agg["n_runs"] == 4
    data = np.vstack([t.full_loss for t in res.traces])
    np.testing.assert_allclose(agg["full_loss"]["mean"], data.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(agg["full_loss"]["std"], data.std(axis=0), atol=1e-13)
