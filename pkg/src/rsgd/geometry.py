"""Manifolds with retractions, projections and metrics for Riemannian SGD.

Points and tangent vectors are stored as plain ambient arrays:

* ``Sphere(n)``: unit vectors of shape ``(n,)``.
* ``Stiefel(n, p)``: ``(n, p)`` matrices with orthonormal columns.
* ``FixedRank(m, n, p)``: :class:`FixedRankPoint` factors ``(U, S, V)``;
  tangent vectors are ambient ``(m, n)`` matrices.
* ``Euclidean(n)``: flat ``(n,)`` vectors.
* ``Product(factors)``: tuples with one entry per factor.

All manifolds use the metric inherited from the Frobenius inner product of
the ambient space. Every operation is a pure function of its arguments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, DimensionError, DomainError, RankDeficiencyError

__all__ = [
    "Manifold",
    "Sphere",
    "Stiefel",
    "FixedRank",
    "FixedRankPoint",
    "Euclidean",
    "Product",
    "GeometryReport",
    "manifold_from_dict",
    "manifold_from_json",
    "first_order_defects",
    "tmap",
    "tinner",
    "tnorm",
]

# Singular values below this fraction of the largest one count as rank loss.
RANK_TOL = 1e-13


@dataclass(frozen=True)
class FixedRankPoint:
    """Thin-SVD factors ``U @ diag(S) @ V.T`` of a rank-``p`` matrix."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def full(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def tmap(fn: Callable, *args):
    """Apply ``fn`` leafwise over (possibly nested) tuples of arrays."""
    if isinstance(args[0], tuple):
        return tuple(tmap(fn, *parts) for parts in zip(*args))
    return fn(*args)


def tinner(u, v) -> float:
    """Frobenius inner product summed over tuple leaves."""
    if isinstance(u, tuple):
        return float(sum(tinner(a, b) for a, b in zip(u, v)))
    return float(np.vdot(u, v).real)


def tnorm(u) -> float:
    return float(np.sqrt(max(tinner(u, u), 0.0)))


def _flatten(u) -> np.ndarray:
    if isinstance(u, tuple):
        return np.concatenate([_flatten(a) for a in u]) if u else np.zeros(0)
    return np.asarray(u, dtype=float).ravel()


def _qf(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with the sign convention diag(R) >= 0."""
    Q, R = np.linalg.qr(M)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs, R * signs[:, None]


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class GeometryReport:
    """Defects of a retraction against its first-order model.

    ``slopes`` holds ``(h, defect)`` pairs and ``slope`` the fitted log-log
    slope of defect against ``h``.
    """

    slopes: list
    slope: float
    verdict: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "slopes": [[float(h), float(d)] for h, d in self.slopes],
            "slope": float(self.slope),
            "verdict": "pass" if self.verdict else "fail",
            "tolerance": self.tolerance,
        }


class Manifold:
    """Base class for embedded Riemannian manifolds.

    Subclasses implement the geometry on raw ambient arrays. Methods taking
    a tangent vector ``v`` expect it to lie in the tangent space at ``x``.
    """

    kind: str = ""
    #: True when :meth:`exp_map` has a closed form.
    has_exp: bool = False
    #: True when :meth:`dist` is the exact geodesic distance.
    exact_dist: bool = False

    # -- descriptor -------------------------------------------------------
    @property
    def dims(self) -> tuple:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        """Intrinsic dimension."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))

    def __repr__(self):
        return f"{type(self).__name__}{tuple(self.dims)}"

    # -- representation ---------------------------------------------------
    def ambient(self, x):
        """Ambient array representation of a point."""
        return x

    def ambient_shape(self):
        raise NotImplementedError

    def check_ambient(self, g) -> None:
        """Raise :class:`DimensionError` if ``g`` has the wrong ambient shape."""
        shape = np.shape(g)
        if shape != self.ambient_shape():
            raise DimensionError(f"{self!r}: expected ambient shape {self.ambient_shape()}, got {shape}")

    def membership_defect(self, x) -> float:
        """Distance of ``x`` from satisfying the manifold constraints."""
        raise NotImplementedError

    def renormalize(self, x):
        """Pull a drifting representation back onto the manifold."""
        raise NotImplementedError

    def zero_vector(self, x):
        return np.zeros(self.ambient_shape())

    # -- geometry ---------------------------------------------------------
    def tangent_project(self, x, g):
        raise NotImplementedError

    def retract(self, x, v):
        raise NotImplementedError

    def exp_map(self, x, v):
        raise CapabilityError(f"{self!r} has no closed-form exponential map; use retract")

    def move(self, x, v, use_exp: bool = True):
        """Exponential map when available (and requested), retraction otherwise."""
        if use_exp and self.has_exp:
            return self.exp_map(x, v)
        return self.retract(x, v)

    def inner(self, x, u, v) -> float:
        return tinner(u, v)

    def norm(self, x, v) -> float:
        return tnorm(v)

    def transport(self, x, y, v):
        """Projection-based vector transport from ``T_x`` to ``T_y``."""
        return self.tangent_project(y, v)

    def dist(self, x, y) -> float:
        """Ambient Frobenius distance (a surrogate unless ``exact_dist``)."""
        return float(np.linalg.norm(_flatten(self.ambient(x)) - _flatten(self.ambient(y))))

    # -- sampling ---------------------------------------------------------
    def random_point(self, rng: np.random.Generator):
        raise NotImplementedError

    def random_tangent(self, x, rng: np.random.Generator, norm: float = 1.0):
        """Gaussian tangent direction at ``x`` rescaled to the given norm."""
        if norm < 0:
            raise DomainError("norm must be nonnegative")
        if norm == 0:
            return self.zero_vector(x)
        v = self.tangent_project(x, tmap(lambda a: rng.standard_normal(np.shape(a)), self.zero_vector(x)))
        n = self.norm(x, v)
        return tmap(lambda a: a * (norm / n), v)

    # -- curves -----------------------------------------------------------
    def segment(self, x, y, t: float):
        """Point at parameter ``t`` of a smooth curve from ``x`` (t=0) to ``y`` (t=1).

        Spheres use the minimizing geodesic, Stiefel the Q factor of the
        chord and fixed-rank matrices the rank-``p`` truncation of the chord.
        """
        raise NotImplementedError

    def segment_velocity(self, x, y, t: float, h: float = 1e-5):
        """Ambient velocity of :meth:`segment` (central differences by default)."""
        a = self.ambient(self.segment(x, y, t + h))
        b = self.ambient(self.segment(x, y, t - h))
        return tmap(lambda p, q: (p - q) / (2 * h), a, b)


class Sphere(Manifold):
    """Unit sphere in ``R^n``; retraction is the exponential map."""

    kind = "sphere"
    has_exp = True
    exact_dist = True

    def __init__(self, n: int):
        if int(n) != n or n < 2:
            raise DomainError(f"Sphere needs n >= 2, got {n}")
        self.n = int(n)

    @property
    def dims(self):
        return (self.n,)

    @property
    def dim(self):
        return self.n - 1

    def ambient_shape(self):
        return (self.n,)

    def membership_defect(self, x):
        return abs(float(np.linalg.norm(x)) - 1.0)

    def renormalize(self, x):
        return x / np.linalg.norm(x)

    def tangent_project(self, x, g):
        self.check_ambient(g)
        return g - np.dot(x, g) * x

    def exp_map(self, x, v):
        self.check_ambient(v)
        nv = np.linalg.norm(v)
        if nv == 0:
            return x.copy()
        y = np.cos(nv) * x + np.sin(nv) * (v / nv)
        return y / np.linalg.norm(y)

    def retract(self, x, v):
        return self.exp_map(x, v)

    def log(self, x, y):
        """Inverse exponential map (undefined at the antipode)."""
        w = y - np.dot(x, y) * x
        nw = np.linalg.norm(w)
        if nw == 0:
            return np.zeros_like(x)
        return self.dist(x, y) * w / nw

    def transport(self, x, y, v):
        """Exact parallel transport along the minimizing geodesic."""
        self.check_ambient(v)
        theta = self.dist(x, y)
        w = y - np.dot(x, y) * x
        nw = np.linalg.norm(w)
        if theta == 0 or nw == 0:
            # identical points, or antipodal (no unique geodesic)
            return self.tangent_project(y, v)
        u = w / nw
        c = np.dot(u, v)
        return v + (np.cos(theta) - 1.0) * c * u - np.sin(theta) * c * x

    def dist(self, x, y):
        # equals arccos(<x, y>) but stays accurate near 0 and pi
        return float(2.0 * np.arctan2(np.linalg.norm(x - y), np.linalg.norm(x + y)))

    def random_point(self, rng):
        x = rng.standard_normal(self.n)
        return x / np.linalg.norm(x)

    def segment(self, x, y, t):
        return self.exp_map(x, t * self.log(x, y))

    def segment_velocity(self, x, y, t, h=None):
        v = self.log(x, y)
        nv = np.linalg.norm(v)
        if nv == 0:
            return np.zeros_like(x)
        u = v / nv
        return nv * (-np.sin(t * nv) * x + np.cos(t * nv) * u)


class Stiefel(Manifold):
    """Orthonormal ``n x p`` frames with the thin-QR retraction."""

    kind = "stiefel"

    def __init__(self, n: int, p: int):
        if int(n) != n or int(p) != p or not 1 <= p <= n:
            raise DomainError(f"Stiefel needs 1 <= p <= n, got n={n}, p={p}")
        self.n, self.p = int(n), int(p)

    @property
    def dims(self):
        return (self.n, self.p)

    @property
    def dim(self):
        return self.n * self.p - self.p * (self.p + 1) // 2

    def ambient_shape(self):
        return (self.n, self.p)

    def membership_defect(self, x):
        return float(np.linalg.norm(x.T @ x - np.eye(self.p)))

    def renormalize(self, x):
        return _qf(x)[0]

    def tangent_project(self, x, g):
        self.check_ambient(g)
        return g - x @ _sym(x.T @ g)

    def retract(self, x, v):
        self.check_ambient(v)
        if not np.any(v):
            return x.copy()
        return _qf(x + v)[0]

    def random_point(self, rng):
        return _qf(rng.standard_normal((self.n, self.p)))[0]

    def segment(self, x, y, t):
        return _qf((1.0 - t) * x + t * y)[0]

    def segment_velocity(self, x, y, t, h=None):
        # derivative of the Q factor of M(t) = (1-t)x + ty
        Q, R = _qf((1.0 - t) * x + t * y)
        dM = y - x
        Rinv_dM = np.linalg.solve(R.T, (Q.T @ dM).T).T  # Q^T dM R^{-1}
        low = np.tril(Rinv_dM, -1)
        omega = low - low.T
        return Q @ omega + (dM - Q @ (Q.T @ dM)) @ np.linalg.inv(R)


class FixedRank(Manifold):
    """Real ``m x n`` matrices of rank exactly ``p`` in factored form.

    Points are :class:`FixedRankPoint` triples; tangent vectors are ambient
    ``m x n`` matrices. The retraction adds the tangent vector and truncates
    back to rank ``p`` through the SVD of a ``2p x 2p`` core.
    """

    kind = "fixed_rank"

    def __init__(self, m: int, n: int, p: int):
        if min(int(m) != m, int(n) != n, int(p) != p) or not 1 <= p <= min(m, n):
            raise DomainError(f"FixedRank needs 1 <= p <= min(m, n), got {m}, {n}, {p}")
        self.m, self.n, self.p = int(m), int(n), int(p)

    @property
    def dims(self):
        return (self.m, self.n, self.p)

    @property
    def dim(self):
        return (self.m + self.n - self.p) * self.p

    def ambient_shape(self):
        return (self.m, self.n)

    def ambient(self, x):
        return x.full()

    def membership_defect(self, x):
        if np.any(x.S <= 0):
            return float("inf")
        eye = np.eye(self.p)
        return float(max(np.linalg.norm(x.U.T @ x.U - eye), np.linalg.norm(x.V.T @ x.V - eye)))

    def from_matrix(self, X: np.ndarray) -> FixedRankPoint:
        """Truncated SVD of a dense matrix."""
        self.check_ambient(X)
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        return self._checked(U[:, : self.p], s[: self.p], Vt[: self.p].T)

    def _checked(self, U, S, V):
        if S[-1] <= RANK_TOL * max(S[0], 1.0) or not np.all(np.isfinite(S)):
            raise RankDeficiencyError(f"smallest singular value {S[-1]:.3e} (largest {S[0]:.3e})")
        return FixedRankPoint(U, S, V)

    def renormalize(self, x):
        Qu, Ru = _qf(x.U)
        Qv, Rv = _qf(x.V)
        Uc, s, Vct = np.linalg.svd((Ru * x.S) @ Rv.T)
        return self._checked(Qu @ Uc, s, Qv @ Vct.T)

    def tangent_project(self, x, g):
        self.check_ambient(g)
        U, V = x.U, x.V
        UtG = U.T @ g
        GV = g @ V
        return U @ UtG + GV @ V.T - U @ (UtG @ V) @ V.T

    def retract(self, x, v):
        self.check_ambient(v)
        if not np.any(v):
            return x
        U, S, V, p = x.U, x.S, x.V, self.p
        M = U.T @ v @ V
        Up = v @ V - U @ M
        Vp = v.T @ U - V @ M.T
        Qu, Ru = np.linalg.qr(Up)
        Qv, Rv = np.linalg.qr(Vp)
        core = np.block([[np.diag(S) + M, Rv.T], [Ru, np.zeros((p, p))]])
        Uc, s, Vct = np.linalg.svd(core)
        U_new = np.hstack([U, Qu]) @ Uc[:, :p]
        V_new = np.hstack([V, Qv]) @ Vct[:p].T
        return self._checked(U_new, s[:p], V_new)

    def random_point(self, rng):
        U = _qf(rng.standard_normal((self.m, self.p)))[0]
        V = _qf(rng.standard_normal((self.n, self.p)))[0]
        S = np.sort(rng.uniform(0.5, 1.5, self.p))[::-1]
        return FixedRankPoint(U, S / np.linalg.norm(S), V)

    def segment(self, x, y, t):
        return self.from_matrix((1.0 - t) * x.full() + t * y.full())


class Euclidean(Manifold):
    """Flat ``R^n``; retraction and exponential map are ``x + v``."""

    kind = "euclidean"
    has_exp = True
    exact_dist = True

    def __init__(self, n: int):
        if int(n) != n or n < 1:
            raise DomainError(f"Euclidean needs n >= 1, got {n}")
        self.n = int(n)

    @property
    def dims(self):
        return (self.n,)

    @property
    def dim(self):
        return self.n

    def ambient_shape(self):
        return (self.n,)

    def membership_defect(self, x):
        return 0.0 if np.all(np.isfinite(x)) else float("inf")

    def renormalize(self, x):
        return x

    def tangent_project(self, x, g):
        self.check_ambient(g)
        return np.array(g, dtype=float, copy=True)

    def exp_map(self, x, v):
        self.check_ambient(v)
        return x + v

    def retract(self, x, v):
        return self.exp_map(x, v)

    def transport(self, x, y, v):
        return np.array(v, dtype=float, copy=True)

    def random_point(self, rng):
        return rng.standard_normal(self.n)

    def segment(self, x, y, t):
        return (1.0 - t) * x + t * y

    def segment_velocity(self, x, y, t, h=None):
        return y - x


class Product(Manifold):
    """Cartesian product; every operation acts factor by factor."""

    kind = "product"

    def __init__(self, factors: Sequence[Manifold]):
        factors = tuple(factors)
        if not factors:
            raise DomainError("Product needs at least one factor")
        self.factors = factors
        self.has_exp = all(f.has_exp for f in factors)
        self.exact_dist = all(f.exact_dist for f in factors)

    @property
    def dims(self):
        return tuple(f.dims for f in self.factors)

    @property
    def dim(self):
        return sum(f.dim for f in self.factors)

    def to_dict(self):
        return {"kind": self.kind, "factors": [f.to_dict() for f in self.factors]}

    def __repr__(self):
        return f"Product({', '.join(map(repr, self.factors))})"

    def _split(self, x):
        if not isinstance(x, tuple) or len(x) != len(self.factors):
            raise DimensionError(f"{self!r}: expected a tuple of {len(self.factors)} components")
        return x

    def _each(self, method, *args):
        parts = [self._split(a) for a in args]
        return tuple(getattr(f, method)(*comp) for f, *comp in zip(self.factors, *parts))

    def ambient(self, x):
        return self._each("ambient", x)

    def ambient_shape(self):
        return tuple(f.ambient_shape() for f in self.factors)

    def check_ambient(self, g):
        for f, gi in zip(self.factors, self._split(g)):
            f.check_ambient(gi)

    def zero_vector(self, x):
        return self._each("zero_vector", x)

    def membership_defect(self, x):
        return max(self._each("membership_defect", x))

    def renormalize(self, x):
        return self._each("renormalize", x)

    def tangent_project(self, x, g):
        return self._each("tangent_project", x, g)

    def retract(self, x, v):
        return self._each("retract", x, v)

    def exp_map(self, x, v):
        if not self.has_exp:
            raise CapabilityError(f"{self!r} has a factor without closed-form exponential map; use retract")
        return self._each("exp_map", x, v)

    def inner(self, x, u, v):
        return float(sum(self._each("inner", x, u, v)))

    def norm(self, x, v):
        return float(np.sqrt(max(self.inner(x, v, v), 0.0)))

    def transport(self, x, y, v):
        return self._each("transport", x, y, v)

    def dist(self, x, y):
        # exact for products of exact factors (distances combine in l2)
        return float(np.sqrt(sum(d * d for d in self._each("dist", x, y))))

    def random_point(self, rng):
        return tuple(f.random_point(rng) for f in self.factors)

    def segment(self, x, y, t):
        return tuple(f.segment(a, b, t) for f, a, b in zip(self.factors, self._split(x), self._split(y)))

    def segment_velocity(self, x, y, t, h=1e-5):
        return tuple(
            f.segment_velocity(a, b, t, h) for f, a, b in zip(self.factors, self._split(x), self._split(y))
        )


_KINDS = {"sphere": Sphere, "stiefel": Stiefel, "fixed_rank": FixedRank, "euclidean": Euclidean}


def manifold_from_dict(d: dict) -> Manifold:
    """Inverse of :meth:`Manifold.to_dict`."""
    try:
        kind = d["kind"]
        if kind == "product":
            return Product([manifold_from_dict(f) for f in d["factors"]])
        return _KINDS[kind](*d["dims"])
    except KeyError as exc:
        raise DomainError(f"bad manifold descriptor {d!r}: missing or unknown {exc}") from None
    except TypeError as exc:
        raise DomainError(f"bad manifold descriptor {d!r}: {exc}") from None


def manifold_from_json(text: str) -> Manifold:
    return manifold_from_dict(json.loads(text))


def first_order_defects(
    manifold: Manifold,
    x,
    v,
    hs: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
    retract: Callable | None = None,
    min_slope: float = 1.9,
) -> GeometryReport:
    """Compare ``retract(x, h v)`` against the straight line ``x + h v``.

    A retraction agrees with the line to first order, so the defect decays
    like ``h**2``. ``retract`` defaults to ``manifold.retract``.
    """
    retract = retract or manifold.retract
    xa = _flatten(manifold.ambient(x))
    va = _flatten(v)
    pairs = []
    for h in hs:
        y = retract(x, tmap(lambda a: h * a, v))
        pairs.append((h, float(np.linalg.norm(_flatten(manifold.ambient(y)) - (xa + h * va)))))
    logs = [(np.log(h), np.log(d)) for h, d in pairs if d > 0]
    if len(logs) < 2:
        slope = float("inf")  # the retraction is exact along the line
    else:
        lh, ld = np.array(logs).T
        slope = float(np.polyfit(lh, ld, 1)[0])
    return GeometryReport(pairs, slope, bool(slope >= min_slope), min_slope)
