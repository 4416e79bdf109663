"""Retracted stochastic subgradient descent.

Each iteration draws a sample, evaluates a subgradient selection, projects
it onto the tangent space and moves along the negative direction::

    x_{k+1} = R_{x_k}(-alpha_k * P_{x_k} g(x_k, s_{k+1}))

where ``R`` is the exponential map when the manifold has a closed form for
it (and ``use_exp_when_available`` is set), and the retraction otherwise.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .diagnostics import aggregate, retracted_grad_norm
from .errors import ConfigError, NumericError, RankDeficiencyError
from .geometry import Manifold, tmap
from .objectives import StochasticObjective
from .seeding import PRNG_NAME, derive_seeds, make_rng

__all__ = [
    "Constant",
    "Regime1",
    "Regime2",
    "schedule_from_dict",
    "step_size",
    "StepRecord",
    "rsgd_step",
    "RunConfig",
    "RunTrace",
    "MultiRunResult",
    "run",
    "multi_run",
    "CSV_HEADER",
]

CSV_HEADER = ("k", "alpha", "stoch_loss", "full_loss", "rgrad_norm")


# -- step sizes ---------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """``alpha_k = s``."""

    s: float

    kind = "constant"

    def __post_init__(self):
        if not self.s > 0:
            raise ConfigError(f"constant step must be positive, got {self.s}")

    def __call__(self, k, prev=None):
        return float(self.s)

    def to_dict(self):
        return {"kind": self.kind, "s": self.s}

    @property
    def label(self):
        return f"constant_{self.s:g}"


@dataclass(frozen=True)
class Regime1:
    """``alpha_0 = s0``, ``alpha_{k+1} = (1 - c alpha_k) alpha_k``.

    The recursion stays positive and strictly decreasing when ``c s0 < 1``.
    """

    s0: float
    c: float

    kind = "regime1"

    def __post_init__(self):
        if not self.s0 > 0:
            raise ConfigError(f"s0 must be positive, got {self.s0}")
        if not 0 < self.c < 1:
            raise ConfigError(f"c must lie in (0, 1), got {self.c}")
        if self.c * self.s0 >= 1:
            raise ConfigError(f"c * s0 = {self.c * self.s0:g} >= 1 makes the sequence nonpositive")

    def __call__(self, k, prev=None):
        if k == 0:
            return float(self.s0)
        if prev is None:
            raise ConfigError("Regime1 needs the previous step size for k > 0")
        return (1.0 - self.c * prev) * prev

    def to_dict(self):
        return {"kind": self.kind, "s0": self.s0, "c": self.c}

    @property
    def label(self):
        return f"regime1_s0={self.s0:g}_c={self.c:g}"


@dataclass(frozen=True)
class Regime2:
    """``alpha_k = a / (1 + k)**b`` with ``a > 0`` and ``1/2 < b <= 1``."""

    a: float
    b: float

    kind = "regime2"

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"a must be positive, got {self.a}")
        if not 0.5 < self.b <= 1:
            raise ConfigError(f"b must lie in (1/2, 1], got {self.b}")

    def __call__(self, k, prev=None):
        return self.a / (1.0 + k) ** self.b

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @property
    def label(self):
        return f"regime2_a={self.a:g}_b={self.b:g}"


_SCHEDULES = {"constant": Constant, "regime1": Regime1, "regime2": Regime2}


def schedule_from_dict(d: dict):
    d = dict(d)
    try:
        cls = _SCHEDULES[d.pop("kind")]
    except KeyError:
        raise ConfigError(f"unknown or missing schedule kind in {d!r}") from None
    try:
        return cls(**{k: float(v) for k, v in d.items()})
    except TypeError as exc:
        raise ConfigError(f"bad {cls.kind} schedule parameters: {exc}") from None


def step_size(sched, k: int, prev: float | None = None) -> float:
    """Step size at iteration ``k`` (``prev`` is the step at ``k - 1``)."""
    if k < 0:
        raise ConfigError("k must be nonnegative")
    return sched(k, prev)


def schedule_sequence(sched, K: int) -> np.ndarray:
    out = np.empty(K)
    prev = None
    for k in range(K):
        prev = out[k] = sched(k, prev)
    return out


# -- one step -----------------------------------------------------------------


@dataclass
class StepRecord:
    k: int
    alpha: float
    stoch_loss: float
    grad_norm: float


def _finite(v) -> bool:
    if isinstance(v, tuple):
        return all(_finite(a) for a in v)
    return bool(np.all(np.isfinite(v)))


def rsgd_step(manifold: Manifold, obj: StochasticObjective, x, k: int, alpha: float,
              rng: np.random.Generator, use_exp: bool = True):
    """One Retracted-SGD update.

    Returns ``(x_next, record)``; the record holds the sampled loss at ``x``
    and the norm of the projected selection.
    """
    s = obj.sample(rng)
    loss, g = obj.stoch_value_and_subgrad(x, s)
    if not (np.isfinite(loss) and _finite(g)):
        raise NumericError("non-finite loss or subgradient", k)
    v = manifold.tangent_project(x, g)
    step = tmap(lambda a: -alpha * a, v)
    try:
        x_next = manifold.move(x, step, use_exp=use_exp)
    except RankDeficiencyError as exc:
        raise NumericError(f"retraction lost rank: {exc}", k) from exc
    return x_next, StepRecord(k, alpha, float(loss), manifold.norm(x, v))


# -- runs ---------------------------------------------------------------------


@dataclass
class RunConfig:
    """Settings of one optimization run.

    ``eval_every`` controls how often the full loss and retracted-gradient
    norm are computed; the initial point ``x0`` defaults to a random point
    drawn from the run seed.
    """

    schedule: Any
    iterations: int
    seed: int = 0
    eval_every: int = 1
    renormalize_every: int = 100
    use_exp_when_available: bool = True
    x0: Any = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.renormalize_every < 0:
            raise ConfigError("renormalize_every must be >= 0 (0 disables)")

    def to_dict(self):
        return {
            "schedule": self.schedule.to_dict(),
            "iterations": self.iterations,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "renormalize_every": self.renormalize_every,
            "use_exp_when_available": self.use_exp_when_available,
        }


def _digest(x) -> str:
    h = hashlib.sha256()
    for leaf in _leaves(x):
        h.update(np.ascontiguousarray(leaf, dtype="<f8").tobytes())
    return h.hexdigest()


def _leaves(x):
    if isinstance(x, tuple):
        for a in x:
            yield from _leaves(a)
    elif hasattr(x, "U"):
        yield from (x.U, x.S, x.V)
    else:
        yield np.asarray(x)


@dataclass
class RunTrace:
    """Per-iteration record of one run.

    ``alpha`` and ``stoch_loss`` have one entry per iteration. The evaluation
    grid ``eval_k`` lists the iterates at which ``full_loss`` and
    ``rgrad_norm`` were computed; it always includes ``0`` and ``K``.
    """

    alpha: np.ndarray
    stoch_loss: np.ndarray
    eval_k: np.ndarray
    full_loss: np.ndarray
    rgrad_norm: np.ndarray
    seed: int
    config: dict
    final_point: Any = None
    elapsed: float = 0.0
    error: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def final_digest(self) -> str:
        return _digest(self.final_point)

    def rows(self):
        """Rows ``(k, alpha, stoch_loss, full_loss, rgrad_norm)`` on the eval grid.

        The final row ``k = K`` has no step, so its alpha and stochastic
        loss are NaN.
        """
        K = len(self.alpha)
        for k, fl, gn in zip(self.eval_k, self.full_loss, self.rgrad_norm):
            a = self.alpha[k] if k < K else np.nan
            sl = self.stoch_loss[k] if k < K else np.nan
            yield int(k), float(a), float(sl), float(fl), float(gn)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k, *vals in self.rows():
            w.writerow([k] + [repr(v) for v in vals])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "final_point_sha256": self.final_digest if self.final_point is not None else None,
            "elapsed_seconds": self.elapsed,
            "error": self.error,
            "prng": PRNG_NAME,
            "version": __version__,
            **self.meta,
        }


def run(config: RunConfig, obj: StochasticObjective) -> RunTrace:
    """Execute ``config.iterations`` RSGD steps on ``obj``.

    Raises
    ------
    NumericError
        If a subgradient or loss becomes non-finite; ``iteration`` tells where.
    """
    manifold = obj.manifold
    K = config.iterations
    init_rng, step_rng = (make_rng(s) for s in derive_seeds(config.seed, 2))
    x = config.x0 if config.x0 is not None else manifold.random_point(init_rng)

    alphas = np.empty(K)
    losses = np.empty(K)
    eval_k = sorted(set(range(0, K, config.eval_every)) | {K})
    full, rgn = [], []
    next_eval = 0
    prev = None
    t0 = time.perf_counter()
    for k in range(K + 1):
        if k == eval_k[next_eval]:
            full.append(obj.full_value(x))
            rgn.append(retracted_grad_norm(manifold, obj, x))
            next_eval += 1
        if k == K:
            break
        prev = alphas[k] = config.schedule(k, prev)
        x, rec = rsgd_step(manifold, obj, x, k, alphas[k], step_rng, config.use_exp_when_available)
        losses[k] = rec.stoch_loss
        if config.renormalize_every and (k + 1) % config.renormalize_every == 0:
            x = manifold.renormalize(x)
    elapsed = time.perf_counter() - t0
    return RunTrace(
        alpha=alphas,
        stoch_loss=losses,
        eval_k=np.array(eval_k),
        full_loss=np.array(full),
        rgrad_norm=np.array(rgn),
        seed=config.seed,
        config=dict(config.to_dict(), objective=obj.describe()),
        final_point=x,
        elapsed=elapsed,
        meta={"feasibility_defect": manifold.membership_defect(x), "exact_dist": manifold.exact_dist},
    )


@dataclass
class MultiRunResult:
    """Traces of repeated runs plus their pointwise aggregate on the eval grid."""

    traces: list
    seeds: list
    failures: list
    stats: dict

    @property
    def n_success(self):
        return len(self.traces)

    def aggregate_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [c for c in CSV_HEADER if c != "k"]
        w.writerow(["k"] + [f"{c}_{s}" for c in cols for s in ("mean", "std", "min", "max")])
        for i, k in enumerate(self.stats.get("k", [])):
            row = [int(k)]
            for c in cols:
                row += [repr(float(self.stats[c][s][i])) for s in ("mean", "std", "min", "max")]
            w.writerow(row)
        return buf.getvalue()


def multi_run(config: RunConfig, obj: StochasticObjective, n_runs: int, workers: int = 1,
              seeds: list | None = None) -> MultiRunResult:
    """Run ``n_runs`` independent copies with seeds derived from ``config.seed``.

    Failed runs are recorded in ``failures`` as ``(seed, message, iteration)``
    and excluded from the aggregate.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    seeds = list(seeds) if seeds is not None else derive_seeds(config.seed, n_runs)
    configs = [RunConfig(**{**_shallow(config), "seed": s}) for s in seeds]

    def one(cfg):
        try:
            return run(cfg, obj)
        except NumericError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, configs))
        # barrier: all runs finished before aggregation
    else:
        results = [one(c) for c in configs]
    traces, failures = [], []
    for s, r in zip(seeds, results):
        if isinstance(r, NumericError):
            failures.append((s, str(r), r.iteration))
        else:
            traces.append(r)
    stats = aggregate(traces) if traces else {}
    return MultiRunResult(traces, seeds, failures, stats)


def _shallow(config: RunConfig) -> dict:
    return {f: getattr(config, f) for f in config.__dataclass_fields__}
