"""Trace analytics: stationarity measures, trend statistics and error bands."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, DimensionError
from .geometry import Manifold

__all__ = [
    "retracted_grad_norm",
    "running_min",
    "aggregate",
    "TraceStats",
    "trend_report",
    "SubspaceSolution",
    "MatrixSolution",
    "known_solution",
    "distance_to_known_solution",
]

BAND_COLUMNS = ("alpha", "stoch_loss", "full_loss", "rgrad_norm")


def retracted_grad_norm(manifold: Manifold, obj, x) -> float:
    """Norm of the tangent projection of the full subgradient selection at ``x``."""
    return manifold.norm(x, manifold.tangent_project(x, obj.full_subgrad(x)))


def running_min(values) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(values, dtype=float))


def _trace_columns(trace) -> dict:
    rows = np.array(list(trace.rows()), dtype=float).reshape(-1, 5)
    return {"k": rows[:, 0].astype(int), **{c: rows[:, i + 1] for i, c in enumerate(BAND_COLUMNS)}}


def aggregate(traces) -> dict:
    """Pointwise mean, std, min and max of every traced column across runs.

    NaN entries (the step-less final row) stay NaN.
    """
    cols = [_trace_columns(t) for t in traces]
    grid = cols[0]["k"]
    for c in cols[1:]:
        if not np.array_equal(c["k"], grid):
            raise DimensionError("traces are on different evaluation grids")
    out = {"k": grid, "n_runs": len(traces)}
    for name in BAND_COLUMNS:
        data = np.vstack([c[name] for c in cols])
        # shift by the first run so identical runs give exactly zero spread
        dev = data - data[0]
        with np.errstate(invalid="ignore"):
            out[name] = {
                "mean": data[0] + dev.mean(axis=0),
                "std": dev.std(axis=0),
                "min": data.min(axis=0),
                "max": data.max(axis=0),
            }
    return out


@dataclass
class TraceStats:
    """Trend summary of a loss/stationarity trace (single run or run mean).

    ``trends`` maps each quantity to its first- and last-decile medians and
    their ratio. ``verdict`` is ``"converging"`` when no quantity got worse
    and at least one improved, ``"neutral"`` when all are flat and
    ``"not converging"`` otherwise.
    """

    eval_k: np.ndarray
    trends: dict
    running_min: np.ndarray
    verdict: str
    bands: dict = field(default_factory=dict)

    @property
    def converging(self) -> bool:
        return self.verdict == "converging"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "trends": self.trends,
            "final_running_min": float(self.running_min[-1]) if len(self.running_min) else None,
            "n_evals": int(len(self.eval_k)),
        }

    def to_csv_columns(self) -> str:
        """Running minimum of the loss on the eval grid, as CSV."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "loss_running_min"])
        for k, v in zip(self.eval_k, self.running_min):
            w.writerow([int(k), repr(float(v))])
        return buf.getvalue()


def decile_medians(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    m = max(1, len(values) // 10)
    return float(np.median(values[:m])), float(np.median(values[-m:]))


def trend_report(source) -> TraceStats:
    """Summarize a :class:`RunTrace`, a :class:`MultiRunResult` or a dict.

    A dict must map ``"loss"`` and optionally ``"rgrad_norm"`` to arrays, with
    an optional ``"k"`` grid.
    """
    bands = {}
    if isinstance(source, dict):
        series = {"loss": np.asarray(source["loss"], dtype=float)}
        if "rgrad_norm" in source:
            series["rgrad_norm"] = np.asarray(source["rgrad_norm"], dtype=float)
        grid = np.asarray(source.get("k", np.arange(len(series["loss"]))))
    elif hasattr(source, "stats"):
        st = source.stats
        if not st:
            raise DimensionError("no successful runs to summarize")
        series = {"loss": st["full_loss"]["mean"], "rgrad_norm": st["rgrad_norm"]["mean"]}
        grid = st["k"]
        bands = {c: st[c] for c in ("full_loss", "rgrad_norm")}
    else:
        series = {"loss": source.full_loss, "rgrad_norm": source.rgrad_norm}
        grid = source.eval_k
    if len(series["loss"]) == 0:
        raise DimensionError("empty trace")

    trends = {}
    better = worse = False
    for name, vals in series.items():
        first, last = decile_medians(vals)
        ratio = last / first if first != 0 else (1.0 if last == 0 else float("inf"))
        trends[name] = {"first_decile_median": first, "last_decile_median": last, "ratio": ratio}
        better |= last < first
        worse |= last > first
    verdict = "not converging" if worse else ("converging" if better else "neutral")
    return TraceStats(np.asarray(grid), trends, running_min(series["loss"]), verdict, bands)


# -- distance to critical sets ------------------------------------------------


@dataclass(frozen=True)
class SubspaceSolution:
    """Critical set given by every orthonormal basis of ``span(basis)``."""

    basis: np.ndarray

    def distance(self, manifold, x) -> float:
        """Sine of the largest principal angle between ``span(x)`` and the solution."""
        X = np.asarray(manifold.ambient(x), dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Q = np.linalg.qr(self.basis)[0]
        resid = X - Q @ (Q.T @ X)
        return float(min(np.linalg.norm(resid, 2), 1.0))


@dataclass(frozen=True)
class MatrixSolution:
    """Singleton critical set ``{A}`` in ambient coordinates."""

    A: np.ndarray

    def distance(self, manifold, x) -> float:
        return float(np.linalg.norm(manifold.ambient(x) - self.A))


def known_solution(obj, gap_tol: float = 1e-8):
    """Critical set of instances where it is computable in closed form.

    * sparse PCA with ``rho = 0``: the dominant ``p``-dimensional eigenspace
      of ``A^T A`` (requires an eigengap);
    * matrix completion with ``sigma = 0`` and ``rank(A) = p``: ``{A}``.
    """
    name = getattr(obj, "name", "")
    if name == "sparse_pca" and obj.rho == 0:
        w, V = np.linalg.eigh(obj.AtA)
        w, V = w[::-1], V[:, ::-1]
        if obj.p < obj.n and w[obj.p - 1] - w[obj.p] <= gap_tol * max(abs(w[0]), 1.0):
            raise CapabilityError("no eigengap: dominant subspace is not unique")
        return SubspaceSolution(V[:, : obj.p])
    if name == "matrix_completion" and obj.sigma == 0:
        s = np.linalg.svd(obj.A, compute_uv=False)
        if obj.p < len(s) and s[obj.p] > 1e-10 * s[0]:
            raise CapabilityError("A has rank above p: minimizer unknown")
        return MatrixSolution(obj.A)
    raise CapabilityError(f"no closed-form critical set for {name!r} with these parameters")


def distance_to_known_solution(obj, x, solution=None) -> float:
    """Distance from ``x`` to the critical set of ``obj`` (see :func:`known_solution`)."""
    solution = solution if solution is not None else known_solution(obj)
    return solution.distance(obj.manifold, x)
