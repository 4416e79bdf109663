"""Numerical verifiers for the geometric and nonsmooth structure.

Each check returns a :class:`CheckReport` whose ``statistic`` is compared
against ``tolerance``; ``passed`` is exactly ``statistic <= tolerance``.

* :func:`check_retraction_axioms`: ``R_x(0) = x`` and ``DR_x(0) = Id``.
* :func:`check_chain_rule`: ``d/dt f(c(t)) = <g(c(t)), c'(t)>`` for almost
  every ``t`` along a curve.
* :func:`check_loop_integral`: the work of the selection around a closed
  loop vanishes.
* :func:`check_grad_ae`: the selection equals the gradient at almost every
  point.
* :func:`check_lipschitz_gradient_outside_ball`: empirical Lipschitz ratio of
  the Riemannian gradient (report only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .geometry import Manifold, Sphere, Stiefel, FixedRank, first_order_defects, tmap, tnorm
from .objectives import (
    L1Objective,
    MatrixCompletion,
    SparsePCA,
    StochasticObjective,
    random_completion_matrix,
    random_sparse_pca_matrix,
)
from .seeding import make_rng

__all__ = [
    "CheckReport",
    "CurveSpec",
    "ScaledRetraction",
    "check_retraction_axioms",
    "check_chain_rule",
    "check_loop_integral",
    "check_grad_ae",
    "check_lipschitz_gradient_outside_ball",
    "default_suite",
]


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class CheckReport:
    name: str
    statistic: float
    tolerance: float
    n_samples: int
    details: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.statistic <= self.tolerance)

    @property
    def max_defect(self) -> float:
        return self.statistic

    def to_dict(self) -> dict:
        return _json_safe({
            "check": self.name,
            "passed": self.passed,
            "max_defect": self.statistic,
            "tolerance": self.tolerance,
            "sample_count": self.n_samples,
            "extra": self.extra,
            "details": self.details,
        })

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: {self.statistic:.3e} <= {self.tolerance:.3e} ({self.n_samples} samples)"


# -- retraction ---------------------------------------------------------------


class ScaledRetraction:
    """A retraction whose tangent argument is rescaled by ``scale``.

    For ``scale != 1`` the differential at zero is ``scale * Id``, so this
    breaks the first-order axiom while keeping ``R_x(0) = x``. Negative
    control for :func:`check_retraction_axioms`.
    """

    def __init__(self, manifold: Manifold, scale: float = 1.1):
        self.manifold = manifold
        self.scale = scale

    def __call__(self, x, v):
        return self.manifold.retract(x, tmap(lambda a: self.scale * a, v))


def check_retraction_axioms(
    manifold: Manifold,
    n_points: int = 5,
    n_dirs: int = 3,
    rng: np.random.Generator | None = None,
    retract: Callable | None = None,
    hs: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
    min_slope: float = 1.9,
    zero_tol: float = 1e-14,
    exact_tol: float = 1e-14,
) -> CheckReport:
    """Verify ``R_x(0) = x`` and the first-order agreement of ``R_x``.

    When the manifold has a closed-form exponential map the retraction is
    compared with it (defects ~0 mean the retraction *is* the exponential);
    otherwise with the straight line ``x + h v``, whose defect must decay
    with log-log slope at least ``min_slope``.

    The statistic is the worst normalized violation
    ``max(zero_defect / zero_tol, min_slope / slope)``; it passes at 1.
    """
    rng = rng if rng is not None else make_rng(0)
    retract = retract or manifold.retract
    details, worst = [], 0.0
    for _ in range(n_points):
        x = manifold.random_point(rng)
        x0 = retract(x, manifold.zero_vector(x))
        zero_defect = tnorm(tmap(np.subtract, manifold.ambient(x0), manifold.ambient(x)))
        for _ in range(n_dirs):
            v = manifold.random_tangent(x, rng, 1.0)
            if manifold.has_exp:
                defects = []
                for h in hs:
                    hv = tmap(lambda a: h * a, v)
                    a, b = manifold.ambient(retract(x, hv)), manifold.ambient(manifold.exp_map(x, hv))
                    defects.append((h, tnorm(tmap(np.subtract, a, b))))
                if max(d for _, d in defects) <= exact_tol:
                    slope = float("inf")
                else:
                    lh, ld = np.log([[h, max(d, 1e-300)] for h, d in defects]).T
                    slope = float(np.polyfit(lh, ld, 1)[0])
            else:
                rep = first_order_defects(manifold, x, v, hs, retract, min_slope)
                defects, slope = rep.slopes, rep.slope
            viol = max(zero_defect / zero_tol, min_slope / slope if slope > 0 else float("inf"))
            worst = max(worst, viol)
            details.append({"zero_defect": zero_defect, "slope": slope, "defects": defects})
    return CheckReport(
        "retraction_axioms", worst, 1.0, len(details), details,
        {"manifold": manifold.to_dict(), "reference": "exp" if manifold.has_exp else "line",
         "min_slope": min_slope, "zero_tol": zero_tol},
    )


# -- curves -------------------------------------------------------------------


@dataclass
class CurveSpec:
    """A curve on a manifold made of smooth segments.

    ``kind`` is ``"retraction"`` (``t -> move(x, t v)``), ``"piecewise"``
    (segments between consecutive ``points``) or ``"loop"`` (piecewise and
    closed). ``T_steps`` is the number of nodes per segment.
    """

    manifold: Manifold
    kind: str
    points: list
    direction: object = None
    T_steps: int = 32
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.T_steps < 8:
            raise DomainError("T_steps must be >= 8")
        if self.kind == "loop":
            first, last = (self.manifold.ambient(p) for p in (self.points[0], self.points[-1]))
            if tnorm(tmap(np.subtract, first, last)) != 0:
                raise DomainError("a loop must end where it starts")
        elif self.kind == "retraction":
            if self.direction is None or len(self.points) != 1:
                raise DomainError("a retraction curve needs one base point and a direction")
        elif self.kind != "piecewise":
            raise DomainError(f"unknown curve kind {self.kind!r}")

    @classmethod
    def retraction_curve(cls, manifold, x, v, T_steps=32):
        return cls(manifold, "retraction", [x], v, T_steps)

    @classmethod
    def piecewise(cls, manifold, points, T_steps=32):
        return cls(manifold, "piecewise", list(points), None, T_steps)

    @classmethod
    def loop(cls, manifold, points, T_steps=32):
        """Closed curve through ``points``; the first point is appended at the end."""
        points = list(points)
        return cls(manifold, "loop", points + [points[0]], None, T_steps)

    @property
    def closed(self) -> bool:
        return self.kind == "loop"

    @property
    def n_segments(self) -> int:
        return 1 if self.kind == "retraction" else len(self.points) - 1

    def point(self, seg: int, t: float):
        m = self.manifold
        if self.kind == "retraction":
            return m.move(self.points[0], tmap(lambda a: t * a, self.direction))
        return m.segment(self.points[seg], self.points[seg + 1], t)

    def velocity(self, seg: int, t: float):
        if self.kind == "retraction":
            h = self.fd_step
            a = self.manifold.ambient(self.point(0, t + h))
            b = self.manifold.ambient(self.point(0, t - h))
            return tmap(lambda p, q: (p - q) / (2 * h), a, b)
        return self.manifold.segment_velocity(self.points[seg], self.points[seg + 1], t)

    def degenerate(self) -> bool:
        if self.kind == "retraction":
            return tnorm(self.direction) == 0
        amb = [self.manifold.ambient(p) for p in self.points]
        return all(tnorm(tmap(np.subtract, a, amb[0])) == 0 for a in amb)


def _directional(obj, x, vel) -> float:
    m = obj.manifold
    return m.inner(x, m.tangent_project(x, obj.full_subgrad(x)), m.tangent_project(x, vel))


def check_chain_rule(obj: StochasticObjective, curve: CurveSpec, tol: float = 1e-5,
                     budget: float = 0.05, h: float = 1e-6) -> CheckReport:
    """Compare ``d/dt f(c(t))`` (central differences) with ``<g, c'>`` at interior nodes.

    A node fails when ``|lhs - rhs| / max(1, |lhs|, |rhs|) > tol``. The check
    passes when at most ``budget`` of the nodes fail; nonsmooth points form a
    null set, but a difference stencil can straddle one.

    Raises
    ------
    DomainError
        If the curve has zero speed.
    """
    if curve.degenerate():
        raise DomainError("degenerate curve (zero speed)")
    f = obj.full_value
    details, fails, worst = [], 0, 0.0
    for seg in range(curve.n_segments):
        for i in range(curve.T_steps):
            t = (i + 0.5) / curve.T_steps
            x = curve.point(seg, t)
            lhs = (f(curve.point(seg, t + h)) - f(curve.point(seg, t - h))) / (2 * h)
            rhs = _directional(obj, x, curve.velocity(seg, t))
            defect = abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
            worst = max(worst, defect)
            bad = defect > tol
            fails += bad
            details.append({"segment": seg, "t": t, "finite_difference": lhs, "selection": rhs,
                            "defect": defect, "failed": bool(bad)})
    n = len(details)
    return CheckReport("chain_rule", fails / n, budget, n, details,
                       {"node_tolerance": tol, "max_node_defect": worst, "failed_nodes": fails,
                        "objective": obj.name})


def _loop_quadrature(obj, curve, T):
    m = obj.manifold
    total = length = gmax = 0.0
    w = np.ones(T + 1)
    w[0] = w[-1] = 0.5
    for seg in range(curve.n_segments):
        for i in range(T + 1):
            t = i / T
            x = curve.point(seg, t)
            vel = m.tangent_project(x, curve.velocity(seg, t))
            g = m.tangent_project(x, obj.full_subgrad(x))
            total += w[i] * m.inner(x, g, vel) / T
            length += w[i] * m.norm(x, vel) / T
            gmax = max(gmax, m.norm(x, g))
    return total, length, gmax


def check_loop_integral(obj: StochasticObjective, loop: CurveSpec, rel_tol: float = 1e-6) -> CheckReport:
    """Work of the selection around a closed loop, Richardson-extrapolated.

    Trapezoidal sums ``I(T)`` and ``I(2T)`` over every segment are combined as
    ``(4 I(2T) - I(T)) / 3``. Passes when the extrapolated magnitude is at
    most ``rel_tol * length * max ||g||``.
    """
    if not loop.closed:
        raise DomainError("loop integral needs a closed curve")
    T = loop.T_steps
    if loop.degenerate():
        return CheckReport("loop_integral", 0.0, 0.0, 1, [], {"degenerate": True, "objective": obj.name})
    I1, _, _ = _loop_quadrature(obj, loop, T)
    I2, length, gmax = _loop_quadrature(obj, loop, 2 * T)
    I4, _, _ = _loop_quadrature(obj, loop, 4 * T)
    rich = (4 * I2 - I1) / 3
    orders = [float(np.log2(abs(a) / abs(b))) if a != 0 and b != 0 else float("nan")
              for a, b in ((I1, I2), (I2, I4))]
    return CheckReport(
        "loop_integral", abs(rich), rel_tol * length * gmax, 3 * loop.n_segments,
        [{"T": T, "integral": I1}, {"T": 2 * T, "integral": I2}, {"T": 4 * T, "integral": I4}],
        {"extrapolated": rich, "length": length, "max_grad_norm": gmax, "quadrature_orders": orders,
         "objective": obj.name},
    )


def check_grad_ae(obj: StochasticObjective, n_points: int = 20, rng: np.random.Generator | None = None,
                  rel_tol: float = 1e-4, budget: float = 0.05, h: float = 1e-6,
                  n_dirs: int | None = None, points: Sequence | None = None) -> CheckReport:
    """Check that the projected selection is the gradient at almost every point.

    At each point, ``n_dirs`` (default: the manifold dimension) random unit
    tangent directions are probed along the retraction. A point passes when
    the central difference matches ``<g, v>`` and the one-sided differences
    agree with each other (no kink), both to ``rel_tol`` relative to
    ``max(|fd|, ||g||)``. The check passes when at most ``budget`` of the
    points fail. Extra ``points`` (e.g. known kinks) are appended to the
    random ones.
    """
    rng = rng if rng is not None else make_rng(0)
    m = obj.manifold
    f = obj.full_value
    dirs = n_dirs or m.dim
    pts = [m.random_point(rng) for _ in range(n_points)] + list(points or [])
    details, fails = [], 0
    for idx, x in enumerate(pts):
        fx = f(x)
        g = m.tangent_project(x, obj.full_subgrad(x))
        gn = m.norm(x, g)
        worst = kink = 0.0
        for _ in range(dirs):
            v = m.random_tangent(x, rng, 1.0)
            fp = f(m.retract(x, tmap(lambda a: h * a, v)))
            fm = f(m.retract(x, tmap(lambda a: -h * a, v)))
            central = (fp - fm) / (2 * h)
            scale = max(abs(central), gn, np.sqrt(np.finfo(float).eps) * max(1.0, abs(fx)))
            worst = max(worst, abs(central - m.inner(x, g, v)) / scale)
            kink = max(kink, abs((fp - fx) / h - (fx - fm) / h) / scale)
        bad = max(worst, kink) > rel_tol
        fails += bad
        details.append({"point": idx, "max_rel_error": worst, "one_sided_gap": kink, "failed": bool(bad),
                        "supplied": idx >= n_points})
    n = len(pts)
    return CheckReport("grad_ae", fails / n, budget, n, details,
                       {"rel_tol": rel_tol, "failed_points": fails, "directions": dirs, "objective": obj.name})


def check_lipschitz_gradient_outside_ball(obj: StochasticObjective, R: float = 0.0, n_pairs: int = 50,
                                          rng: np.random.Generator | None = None, base=None,
                                          radius: float = 0.1, max_tries: int = 10000) -> CheckReport:
    """Empirical Lipschitz ratio ``||T(grad f(x)) - grad f(x')|| / d(x, x')``.

    Pairs are drawn with ``d(x, base) > R`` and ``x'`` obtained by moving at
    most ``radius`` from ``x``; ``T`` transports from ``x`` to ``x'``. This
    is report-only: it passes whenever the ratios are finite.
    """
    rng = rng if rng is not None else make_rng(0)
    m = obj.manifold
    base = base if base is not None else m.random_point(rng)
    ratios = []
    tries = 0
    while len(ratios) < n_pairs and tries < max_tries:
        tries += 1
        x = m.random_point(rng)
        if m.dist(x, base) <= R:
            continue
        y = m.move(x, m.random_tangent(x, rng, radius * rng.uniform(0.1, 1.0)))
        d = m.dist(x, y)
        if d == 0:
            continue
        gx = m.tangent_project(x, obj.full_subgrad(x))
        gy = m.tangent_project(y, obj.full_subgrad(y))
        diff = tmap(np.subtract, m.transport(x, y, gx), gy)
        ratios.append(m.norm(y, diff) / d)
    ratios = np.array(ratios)
    finite = bool(np.all(np.isfinite(ratios)))
    extra = {"R": R, "radius": radius, "objective": obj.name, "exact_dist": m.exact_dist}
    if len(ratios):
        extra.update(max_ratio=float(ratios.max()), median_ratio=float(np.median(ratios)))
    return CheckReport("lipschitz_gradient", 0.0 if finite else float("inf"), 0.0, len(ratios),
                       [{"ratio": r} for r in ratios], extra)


# -- default suite ------------------------------------------------------------


def orthant_points(n: int, count: int, rng) -> list:
    """Random unit vectors with strictly positive coordinates."""
    return [(lambda z: z / np.linalg.norm(z))(np.abs(rng.standard_normal(n)) + 0.3) for _ in range(count)]


def default_suite(seed: int = 0, corrupt: str | None = None) -> list[CheckReport]:
    """Run the standard verifier suite at desk scale.

    ``corrupt`` injects a negative control: ``"retraction"`` swaps in a
    :class:`ScaledRetraction`, ``"subgradient"`` flips subgradient signs.
    """
    from .objectives import WrongSignSubgradient

    rng = make_rng(seed)
    reports = []
    for man in (Sphere(10), Stiefel(10, 3), FixedRank(20, 20, 3)):
        retract = ScaledRetraction(man) if corrupt == "retraction" else None
        reports.append(check_retraction_axioms(man, 4, 3, rng, retract=retract))

    def wrap(obj):
        return WrongSignSubgradient(obj) if corrupt == "subgradient" else obj

    pca = wrap(SparsePCA(random_sparse_pca_matrix(5, seed), rho=0.0, p=2))
    st = pca.manifold
    x = st.random_point(rng)
    reports.append(check_chain_rule(pca, CurveSpec.retraction_curve(st, x, st.random_tangent(x, rng, 1.0))))
    reports.append(check_chain_rule(pca, CurveSpec.piecewise(st, [st.random_point(rng) for _ in range(3)])))

    sphere = Sphere(3)
    l1 = wrap(L1Objective(sphere))
    reports.append(check_chain_rule(l1, CurveSpec.piecewise(sphere, orthant_points(3, 3, rng))))
    # a great circle crosses the coordinate planes: kinks must stay within budget
    x = sphere.random_point(rng)
    v = sphere.random_tangent(x, rng, 2 * np.pi)
    reports.append(check_chain_rule(l1, CurveSpec.retraction_curve(sphere, x, v, T_steps=200)))

    reports.append(check_loop_integral(pca, CurveSpec.loop(st, [st.random_point(rng) for _ in range(3)])))
    reports.append(check_loop_integral(l1, CurveSpec.loop(sphere, orthant_points(3, 3, rng))))

    mc = wrap(MatrixCompletion(random_completion_matrix(8, 8, 2, seed), p=2, sigma=0.0))
    reports.append(check_grad_ae(mc, 20, rng))
    lin = SparsePCA(random_sparse_pca_matrix(5, seed), rho=0.0, p=1, on_sphere=True)
    reports.append(check_lipschitz_gradient_outside_ball(lin, 0.0, 50, rng))
    return reports
