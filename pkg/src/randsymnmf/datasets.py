"""Synthetic symmetric inputs with planted cluster structure."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .matrix import SymmetricMatrix


def block_labels(m: int, blocks: int) -> np.ndarray:
    """Contiguous, nearly equal blocks."""
    return (np.arange(m) * blocks) // m


def planted_partition(m: int, blocks: int, p_in: float, p_out: float, rng: np.random.Generator):
    """Undirected stochastic block model adjacency (0/1, zero diagonal) and its labels."""
    labels = block_labels(m, blocks)
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((m, m)) < probs, k=1)
    adj = sp.csr_matrix((upper | upper.T).astype(np.float64))
    return SymmetricMatrix(adj, check=False), labels


def sparse_block_graph(m: int, blocks: int, degree: int, in_fraction: float, rng: np.random.Generator):
    """Large sparse block graph with roughly ``degree`` nonzeros per row.

    Each vertex proposes ``degree / 2`` edges, a fraction ``in_fraction`` of
    them inside its own block; the union is symmetrized.
    """
    labels = block_labels(m, blocks)
    starts = np.searchsorted(labels, np.arange(blocks))
    ends = np.append(starts[1:], m)
    half = max(degree // 2, 1)
    src = np.repeat(np.arange(m), half)
    inside = rng.random(src.size) < in_fraction
    lab = labels[src]
    lo, hi = starts[lab], ends[lab]
    dst = np.where(inside, lo + (rng.random(src.size) * (hi - lo)).astype(np.int64),
                   rng.integers(0, m, src.size))
    keep = src != dst
    src, dst = src[keep], dst[keep]
    adj = sp.coo_matrix((np.ones(src.size), (src, dst)), shape=(m, m)).tocsr()
    adj = adj + adj.T
    adj.data[:] = 1.0
    return SymmetricMatrix(adj, check=False), labels


def planted_factor(m: int, k: int, rng: np.random.Generator, sparse_fraction: float = 0.0) -> np.ndarray:
    """Nonnegative factor with U[0, 1) entries; a fraction of entries can be zeroed."""
    H = rng.random((m, k))
    if sparse_fraction > 0:
        H[rng.random((m, k)) < sparse_fraction] = 0.0
    return H
