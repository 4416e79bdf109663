"""Stochastic objectives with Clarke-subgradient selections.

Every objective exposes the same oracle bundle:

* ``sample(rng)`` draws a random sample ``s``;
* ``stoch_value(x, s)`` / ``stoch_subgrad(x, s)`` evaluate ``f(x, s)`` and a
  subgradient selection of it, returned in ambient coordinates;
* ``full_value(x)`` / ``full_subgrad(x)`` evaluate the expectation
  ``F(x) = E f(x, s)`` and a selection for it.

Absolute values use ``sign(0) = 0`` and ReLU uses ``relu'(0) = 0``. These
are valid selections of the conservative fields produced by automatic
differentiation. Callers project the ambient selection onto the tangent
space themselves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, DomainError, ParseError
from .geometry import Euclidean, FixedRank, Manifold, Product, Sphere, Stiefel, tmap
from .seeding import PRNG_NAME, make_rng

__all__ = [
    "StochasticObjective",
    "SparsePCA",
    "MatrixCompletion",
    "ReluNet",
    "Dataset",
    "ConstantObjective",
    "LinearObjective",
    "QuadraticObjective",
    "L1Objective",
    "WrongSignSubgradient",
    "sparse_pca_new",
    "matrix_completion_new",
    "relu_net_new",
    "parse_libsvm",
    "write_libsvm",
    "synthetic_regression",
    "random_sparse_pca_matrix",
    "random_completion_matrix",
    "save_instance",
    "load_instance",
]


class StochasticObjective:
    """Base class for ``f(x, s)`` oracles on a manifold."""

    name = "objective"
    has_full_value = True
    has_full_subgrad = True

    def __init__(self, manifold: Manifold):
        self.manifold = manifold

    def sample(self, rng: np.random.Generator):
        return None

    def samples(self) -> Iterator[tuple[object, float]] | None:
        """Enumerate ``(sample, probability)`` when the sample space is finite."""
        return None

    def stoch_value(self, x, s) -> float:
        return self.full_value(x)

    def stoch_subgrad(self, x, s):
        return self.full_subgrad(x)

    def stoch_value_and_subgrad(self, x, s):
        return self.stoch_value(x, s), self.stoch_subgrad(x, s)

    def full_value(self, x) -> float:
        raise NotImplementedError

    def full_subgrad(self, x):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"name": self.name, "manifold": self.manifold.to_dict(), "params": self.params()}


# -- paper benchmarks ---------------------------------------------------------


class SparsePCA(StochasticObjective):
    r"""``-tr(X^T A^T A X) + rho * ||X||_1`` over orthonormal frames.

    A sample is a row index ``i`` drawn uniformly; ``n a_i^T a_i`` is then an
    unbiased estimate of ``A^T A``. The l1 term is never sampled.

    Parameters
    ----------
    A : (n, n) array
    rho : float
        Weight of the l1 penalty.
    p : int
        Number of columns of ``X``.
    on_sphere : bool
        For ``p == 1``, optimize over ``Sphere(n)`` with vector iterates
        instead of ``Stiefel(n, 1)``.
    """

    name = "sparse_pca"

    def __init__(self, A, rho: float = 1.0, p: int = 1, on_sphere: bool = False):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"sparse PCA needs a square matrix, got shape {A.shape}")
        n = A.shape[0]
        if not 1 <= p <= n:
            raise DomainError(f"need 1 <= p <= n, got p={p}, n={n}")
        if rho < 0:
            raise DomainError("rho must be nonnegative")
        if on_sphere and p != 1:
            raise DomainError("on_sphere requires p == 1")
        self.A = A
        self.AtA = A.T @ A
        self.rho = float(rho)
        self.n, self.p = n, int(p)
        super().__init__(Sphere(n) if on_sphere else Stiefel(n, p))

    def params(self):
        return {"n": self.n, "p": self.p, "rho": self.rho}

    def sample(self, rng):
        return int(rng.integers(self.n))

    def samples(self):
        return ((i, 1.0 / self.n) for i in range(self.n))

    def _l1(self, X):
        return self.rho * float(np.abs(X).sum())

    def stoch_value(self, X, i):
        aX = self.A[i] @ X
        return -self.n * float(np.sum(aX * aX)) + self._l1(X)

    def stoch_subgrad(self, X, i):
        a = self.A[i]
        aX = a @ X
        return -2.0 * self.n * np.multiply.outer(a, aX) + self.rho * np.sign(X)

    def full_value(self, X):
        return -float(np.sum(X * (self.AtA @ X))) + self._l1(X)

    def full_subgrad(self, X):
        return -2.0 * (self.AtA @ X) + self.rho * np.sign(X)


class MatrixCompletion(StochasticObjective):
    r"""``sum_ij |A_ij - X_ij|`` over rank-``p`` matrices with noisy access to ``A``.

    A sample is a 64-bit seed; each oracle call sees ``A + eps`` with
    ``eps_ij ~ N(0, sigma^2)`` regenerated from that seed, so repeated calls
    with the same sample agree.
    """

    name = "matrix_completion"

    def __init__(self, A, p: int, sigma: float = 0.0):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise DimensionError(f"A must be a matrix, got shape {A.shape}")
        m, n = A.shape
        if not 1 <= p <= min(m, n):
            raise DomainError(f"need 1 <= p <= min(m, n), got p={p}")
        if sigma < 0:
            raise DomainError("sigma must be nonnegative")
        self.A = A
        self.p = int(p)
        self.sigma = float(sigma)
        super().__init__(FixedRank(m, n, p))

    def params(self):
        m, n = self.A.shape
        return {"m": m, "n": n, "p": self.p, "sigma": self.sigma}

    def sample(self, rng):
        return int(rng.integers(2**63))

    def noisy_target(self, s) -> np.ndarray:
        if self.sigma == 0:
            return self.A
        return self.A + make_rng(s).normal(0.0, self.sigma, self.A.shape)

    def _residual(self, x, target):
        return target - self.manifold.ambient(x)

    def stoch_value(self, x, s):
        return float(np.abs(self._residual(x, self.noisy_target(s))).sum())

    def stoch_subgrad(self, x, s):
        return -np.sign(self._residual(x, self.noisy_target(s)))

    def stoch_value_and_subgrad(self, x, s):
        r = self._residual(x, self.noisy_target(s))
        return float(np.abs(r).sum()), -np.sign(r)

    def full_value(self, x):
        """Noise-free loss ``sum |A - X|``.

        For ``sigma > 0`` this is not the expectation of ``stoch_value``,
        which exceeds it by a folded-normal correction.
        """
        return float(np.abs(self._residual(x, self.A)).sum())

    def full_subgrad(self, x):
        return -np.sign(self._residual(x, self.A))


@dataclass
class Dataset:
    """Dense regression data."""

    features: np.ndarray
    targets: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] == 0 or self.features.shape[1] == 0:
            raise DimensionError(f"features must be a nonempty N x d matrix, got {self.features.shape}")
        if self.targets.shape != (self.features.shape[0],):
            raise DimensionError("targets must be a vector with one entry per row")
        if np.isnan(self.features).any() or np.isnan(self.targets).any():
            raise DomainError("dataset contains NaN")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def standardized(self) -> "Dataset":
        mu = self.features.mean(axis=0)
        sd = self.features.std(axis=0)
        sd[sd == 0] = 1.0
        return Dataset((self.features - mu) / sd, self.targets.copy(), self.name)


class ReluNet(StochasticObjective):
    r"""Mean absolute error of a ReLU network with unit-norm neurons.

    Every hidden neuron's incoming weight vector lives on a sphere, which is
    the batch-normalization constraint. The linear output layer (weights and
    bias) is an unconstrained Euclidean block. The point is a tuple with one
    sphere vector per hidden neuron, layer by layer, followed by the
    Euclidean block ``[W_out.ravel(), b_out]``.

    A sample is a sorted array of ``batch_size`` distinct row indices.
    Subgradients come from reverse-mode accumulation with ``relu'(0) = 0``
    and ``sign(0) = 0``.
    """

    name = "relu_net"

    def __init__(self, dataset: Dataset, widths: Sequence[int], n_out: int = 1, batch_size: int = 64,
                 n_in: int | None = None):
        widths = [int(w) for w in widths]
        if not widths or min(widths) < 1 or n_out < 1:
            raise DomainError("layer widths and n_out must be positive")
        d = dataset.n_features
        if n_in is not None and n_in != d:
            raise DimensionError(f"first layer expects {n_in} features, dataset has {d}")
        if not 1 <= batch_size <= dataset.n_samples:
            raise DomainError(f"batch size must be in [1, {dataset.n_samples}], got {batch_size}")
        self.dataset = dataset
        self.widths = widths
        self.n_out = int(n_out)
        self.batch_size = int(batch_size)
        self.fan_in = [d] + widths[:-1]
        factors = []
        for w, fin in zip(widths, self.fan_in):
            factors += [Sphere(fin)] * w
        factors.append(Euclidean(n_out * (widths[-1] + 1)))
        super().__init__(Product(factors))

    def params(self):
        return {"widths": self.widths, "n_out": self.n_out, "batch_size": self.batch_size,
                "n_samples": self.dataset.n_samples, "n_features": self.dataset.n_features,
                "dataset": self.dataset.name}

    def sample(self, rng):
        return np.sort(rng.choice(self.dataset.n_samples, self.batch_size, replace=False))

    def unpack(self, w):
        """Layer weight matrices and the output ``(W_out, b_out)``."""
        mats, k = [], 0
        for width in self.widths:
            mats.append(np.stack(w[k:k + width]))
            k += width
        tail = w[k]
        nl = self.widths[-1]
        W_out = tail[: self.n_out * nl].reshape(self.n_out, nl)
        return mats, W_out, tail[self.n_out * nl:]

    def predict(self, w, X):
        mats, W_out, b_out = self.unpack(w)
        h = X
        for W in mats:
            h = np.maximum(h @ W.T, 0.0)
        return h @ W_out.T + b_out

    def _loss_grad(self, w, X, y, need_grad=True):
        mats, W_out, b_out = self.unpack(w)
        acts, pre = [X], []
        for W in mats:
            z = acts[-1] @ W.T
            pre.append(z)
            acts.append(np.maximum(z, 0.0))
        out = acts[-1] @ W_out.T + b_out
        r = out - y[:, None]
        B = X.shape[0]
        loss = float(np.abs(r).sum() / B)
        if not need_grad:
            return loss, None
        dout = np.sign(r) / B
        gW_out = dout.T @ acts[-1]
        gb_out = dout.sum(axis=0)
        dh = dout @ W_out
        grads = []
        for W, z, a in zip(reversed(mats), reversed(pre), reversed(acts[:-1])):
            dz = dh * (z > 0)
            grads.append(dz.T @ a)
            dh = dz @ W
        grads.reverse()
        parts = [row for g in grads for row in g]
        parts.append(np.concatenate([gW_out.ravel(), gb_out]))
        return loss, tuple(parts)

    def _batch(self, s):
        return self.dataset.features[s], self.dataset.targets[s]

    def stoch_value(self, w, s):
        return self._loss_grad(w, *self._batch(s), need_grad=False)[0]

    def stoch_subgrad(self, w, s):
        return self._loss_grad(w, *self._batch(s))[1]

    def stoch_value_and_subgrad(self, w, s):
        return self._loss_grad(w, *self._batch(s))

    def full_value(self, w):
        return self._loss_grad(w, self.dataset.features, self.dataset.targets, need_grad=False)[0]

    def full_subgrad(self, w):
        return self._loss_grad(w, self.dataset.features, self.dataset.targets)[1]


def sparse_pca_new(A, rho: float = 1.0, p: int = 1, on_sphere: bool = False) -> SparsePCA:
    return SparsePCA(A, rho, p, on_sphere)


def matrix_completion_new(A, p: int, sigma: float = 0.0) -> MatrixCompletion:
    return MatrixCompletion(A, p, sigma)


def relu_net_new(dataset: Dataset, layer_widths: Sequence[int], n_out: int = 1, batch_size: int = 64,
                 n_in: int | None = None) -> ReluNet:
    return ReluNet(dataset, layer_widths, n_out, batch_size, n_in)


# -- small deterministic objectives (checks, tests, examples) -----------------


class ConstantObjective(StochasticObjective):
    name = "constant"

    def __init__(self, manifold, value: float = 0.0):
        super().__init__(manifold)
        self.value = float(value)

    def full_value(self, x):
        return self.value

    def full_subgrad(self, x):
        return tmap(np.zeros_like, self.manifold.ambient(x))


class LinearObjective(StochasticObjective):
    """``<c, x>`` in ambient coordinates."""

    name = "linear"

    def __init__(self, manifold, c):
        super().__init__(manifold)
        self.c = np.asarray(c, dtype=float)

    def full_value(self, x):
        return float(np.sum(self.c * self.manifold.ambient(x)))

    def full_subgrad(self, x):
        return self.c.copy()


class QuadraticObjective(StochasticObjective):
    """``x^T M x`` for a symmetric ``M``."""

    name = "quadratic"

    def __init__(self, manifold, M):
        super().__init__(manifold)
        M = np.asarray(M, dtype=float)
        self.M = 0.5 * (M + M.T)

    def full_value(self, x):
        return float(np.sum(x * (self.M @ x)))

    def full_subgrad(self, x):
        return 2.0 * (self.M @ x)


class L1Objective(StochasticObjective):
    """``sum |x_i|`` with the ``sign(0) = 0`` selection."""

    name = "l1"

    def full_value(self, x):
        return float(np.abs(self.manifold.ambient(x)).sum())

    def full_subgrad(self, x):
        return np.sign(self.manifold.ambient(x))


class WrongSignSubgradient(StochasticObjective):
    """Wrap an objective and flip the sign of every subgradient it returns.

    Used as a negative control: verifiers must reject it.
    """

    def __init__(self, inner: StochasticObjective):
        super().__init__(inner.manifold)
        self.inner = inner
        self.name = f"wrong_sign({inner.name})"

    def sample(self, rng):
        return self.inner.sample(rng)

    def samples(self):
        return self.inner.samples()

    def stoch_value(self, x, s):
        return self.inner.stoch_value(x, s)

    def stoch_subgrad(self, x, s):
        return tmap(np.negative, self.inner.stoch_subgrad(x, s))

    def full_value(self, x):
        return self.inner.full_value(x)

    def full_subgrad(self, x):
        return tmap(np.negative, self.inner.full_subgrad(x))


# -- data ingestion -----------------------------------------------------------


def parse_libsvm(path, n_features: int | None = None, standardize: bool = False) -> Dataset:
    """Read a LIBSVM/SVMlight text file into a dense :class:`Dataset`.

    Each line is ``<target> <index>:<value> ...`` with 1-based indices; absent
    entries are zero. Index order within a line is not enforced. Blank lines
    and ``#`` comments are ignored.
    """
    path = Path(path)
    targets, rows = [], []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, *items = line.split()
            try:
                targets.append(float(head))
            except ValueError:
                raise ParseError(f"bad target {head!r}", lineno) from None
            row = {}
            for item in items:
                idx, sep, val = item.partition(":")
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"bad feature {item!r}", lineno) from None
                if not sep or j < 1:
                    raise ParseError(f"bad feature {item!r}", lineno)
                row[j - 1] = v
                max_index = max(max_index, j)
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data")
    d = n_features if n_features is not None else max_index
    if max_index > d:
        raise ParseError(f"{path}: feature index {max_index} exceeds n_features={d}")
    X = np.zeros((len(rows), d))
    for i, row in enumerate(rows):
        for j, v in row.items():
            X[i, j] = v
    data = Dataset(X, np.array(targets), path.stem)
    return data.standardized() if standardize else data


def write_libsvm(dataset: Dataset, path) -> None:
    """Write a dataset in LIBSVM format, skipping zero entries."""
    with open(path, "w") as fh:
        for x, y in zip(dataset.features, dataset.targets):
            feats = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(x.tolist()) if v != 0)
            fh.write(f"{float(y)!r} {feats}\n")


def synthetic_regression(n_samples: int, n_features: int, seed: int = 0) -> Dataset:
    """Regression data with a nonlinear (piecewise-linear) ground truth."""
    rng = make_rng(seed)
    X = np.round(rng.standard_normal((n_samples, n_features)), 4)
    w1, w2 = rng.standard_normal((2, n_features))
    y = np.maximum(X @ w1, 0.0) - 0.5 * np.maximum(X @ w2, 0.0) + 0.1 * rng.standard_normal(n_samples)
    return Dataset(X, np.round(y, 4), "synthetic")


# -- problem instances --------------------------------------------------------


def random_sparse_pca_matrix(n: int, seed: int) -> np.ndarray:
    """Gaussian ``n x n`` matrix scaled by ``1/sqrt(n)`` (so ``A^T A`` is O(1))."""
    if n < 1:
        raise DomainError("n must be positive")
    return make_rng(seed).standard_normal((n, n)) / np.sqrt(n)


def random_completion_matrix(m: int, n: int, rank: int, seed: int) -> np.ndarray:
    """Gaussian matrix truncated to ``rank`` and scaled to unit Frobenius norm."""
    if min(m, n) < 1 or not 1 <= rank <= min(m, n):
        raise DomainError(f"need positive m, n and 1 <= rank <= min(m, n), got {m}, {n}, {rank}")
    G = make_rng(seed).standard_normal((m, n))
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    A = (U[:, :rank] * s[:rank]) @ Vt[:rank]
    return A / np.linalg.norm(A)


def save_instance(directory, name: str, meta: dict, payload: np.ndarray, force: bool = False) -> Path:
    """Write ``<name>.json`` metadata and a ``<name>.npy`` matrix payload.

    Raises ``FileExistsError`` if either file exists and ``force`` is false.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta_path, data_path = directory / f"{name}.json", directory / f"{name}.npy"
    if not force and (meta_path.exists() or data_path.exists()):
        raise FileExistsError(f"{meta_path} or {data_path} already exists")
    np.save(data_path, np.ascontiguousarray(payload, dtype="<f8"), allow_pickle=False)
    meta = dict(meta, payload=data_path.name, prng=PRNG_NAME)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta_path


def load_instance(meta_path) -> tuple[dict, np.ndarray]:
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text())
    payload = np.load(meta_path.parent / meta["payload"], allow_pickle=False)
    return meta, payload

