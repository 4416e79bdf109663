"""Riemannian stochastic subgradient descent for nonsmooth objectives."""

__version__ = "0.1.0"

__all__ = [
    "Sphere", "Stiefel", "FixedRank", "FixedRankPoint", "Euclidean", "Product", "Manifold",
    "manifold_from_dict", "Dataset", "SparsePCA", "MatrixCompletion", "ReluNet", "parse_libsvm",
    "Constant", "Regime1", "Regime2", "RunConfig", "rsgd_step", "run", "multi_run",
    "retracted_grad_norm", "trend_report", "distance_to_known_solution",
]

from .geometry import (  # noqa: E402
    Euclidean,
    FixedRank,
    FixedRankPoint,
    Manifold,
    Product,
    Sphere,
    Stiefel,
    manifold_from_dict,
)
from .objectives import (  # noqa: E402
    Dataset,
    MatrixCompletion,
    ReluNet,
    SparsePCA,
    parse_libsvm,
)
from .optimizer import Constant, Regime1, Regime2, RunConfig, multi_run, rsgd_step, run  # noqa: E402
from .diagnostics import distance_to_known_solution, retracted_grad_norm, trend_report  # noqa: E402
