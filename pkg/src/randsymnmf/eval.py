"""Cluster assignment from SymNMF factors and clustering quality metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .matrix import SymmetricMatrix


@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be a vector")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels) -> "Clustering":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels, int(labels.max()) + 1 if labels.size else 0)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def __len__(self) -> int:
        return self.labels.size


def assign_clusters(H: np.ndarray) -> Clustering:
    """Label each row by its largest column; ties go to the lowest column index."""
    H = np.asarray(H)
    return Clustering(np.argmax(H, axis=1), H.shape[1])


def _labels(c) -> np.ndarray:
    return c.labels if isinstance(c, Clustering) else np.asarray(c, dtype=np.int64)


def _pairs(n):
    return n * (n - 1) / 2.0


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index of two partitions, from the pair-counting contingency table."""
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape:
        raise ValueError("partitions have different lengths")
    n = la.size
    _, ia = np.unique(la, return_inverse=True)
    _, ib = np.unique(lb, return_inverse=True)
    table = sp.coo_matrix((np.ones(n), (ia, ib))).tocsr()
    sum_cells = _pairs(table.data).sum()
    sum_rows = _pairs(np.asarray(table.sum(axis=1)).ravel()).sum()
    sum_cols = _pairs(np.asarray(table.sum(axis=0)).ravel()).sum()
    total = _pairs(n)
    if total == 0:
        return 1.0
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def silhouette_similarity(A: SymmetricMatrix, c: Clustering) -> tuple[np.ndarray, np.ndarray]:
    """Silhouette scores for a similarity matrix.

    For vertex v in cluster l, ``a`` is its mean similarity to the other
    members of l and ``b`` the largest mean similarity to another cluster;
    ``s = (a - b) / max(a, b)``, with ``s = 0`` for singletons and when
    ``max(a, b) = 0``. Empty clusters are ignored.

    Returns
    -------
    per_cluster : ndarray of length k
        Mean of ``s`` over each cluster's members (NaN for empty clusters).
    per_vertex : ndarray of length m
    """
    labels = c.labels
    m = A.dim
    if labels.size != m:
        raise ValueError("labels and matrix sizes differ")
    sizes = c.sizes
    present = np.flatnonzero(sizes > 0)
    if present.size < 2:
        raise ValueError("silhouette needs at least two non-empty clusters")
    onehot = sp.csr_matrix((np.ones(m), (np.arange(m), labels)), shape=(m, c.k))
    sums = np.asarray((A.data @ onehot).todense() if A.is_sparse else A.data @ onehot.toarray())
    diag = A.data.diagonal() if A.is_sparse else np.diag(A.data)
    rows = np.arange(m)
    own_size = sizes[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (sums[rows, labels] - diag) / (own_size - 1)
        means = sums / np.where(sizes > 0, sizes, 1)[None, :]
    means[:, sizes == 0] = -np.inf
    means[rows, labels] = -np.inf
    b = means.max(axis=1)
    top = np.maximum(a, b)
    s = np.zeros(m)
    ok = (own_size > 1) & (top > 0)
    s[ok] = (a[ok] - b[ok]) / top[ok]
    per_cluster = np.full(c.k, np.nan)
    sums_s = np.bincount(labels, weights=s, minlength=c.k)
    per_cluster[present] = sums_s[present] / sizes[present]
    return per_cluster, s


def write_labels(path, c: Clustering) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["vertex_id", "label"])
        for i, lab in enumerate(c.labels):
            writer.writerow([i, int(lab)])


def read_labels(path) -> np.ndarray:
    """Read a ``vertex_id,label`` CSV; vertex ids must cover 0..m-1."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["vertex_id", "label"]:
            raise ValueError(f"{path}: expected header 'vertex_id,label'")
        rows = [(int(v), int(lab)) for v, lab in reader]
    ids = np.array([r[0] for r in rows], dtype=np.int64)
    labels = np.array([r[1] for r in rows], dtype=np.int64)
    if ids.size and not np.array_equal(np.sort(ids), np.arange(ids.size)):
        raise ValueError(f"{path}: vertex ids must be 0..m-1")
    out = np.empty_like(labels)
    out[ids] = labels
    return out


def metrics_json(ari: float | None, per_cluster, sizes) -> str:
    payload = {
        "ari": ari,
        "per_cluster_silhouette": None if per_cluster is None else
        [None if np.isnan(v) else float(v) for v in per_cluster],
        "cluster_sizes": [int(v) for v in sizes],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
