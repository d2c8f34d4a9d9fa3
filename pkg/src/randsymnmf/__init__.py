"""Randomized algorithms for symmetric nonnegative matrix factorization."""

__version__ = "0.1.0"

from .eval import Clustering, adjusted_rand_index, assign_clusters, silhouette_similarity
from .matrix import LowRankOperator, SymmetricMatrix, load_matrix_market, normalize_graph
from .solvers import SolverConfig, ConvergenceTrace, factorize

__all__ = [
    "Clustering", "ConvergenceTrace", "LowRankOperator", "SolverConfig", "SymmetricMatrix",
    "adjusted_rand_index", "assign_clusters", "factorize", "load_matrix_market", "normalize_graph",
    "silhouette_similarity",
]
