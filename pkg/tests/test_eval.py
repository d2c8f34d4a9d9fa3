import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score, silhouette_samples

from randsymnmf.eval import (Clustering, adjusted_rand_index, assign_clusters, metrics_json, read_labels,
                             silhouette_similarity, write_labels)
from randsymnmf.matrix import SymmetricMatrix


def test_assign_clusters_ties_go_low():
    H = np.array([[1.0, 1.0], [0.0, 2.0], [0.0, 0.0]])
    np.testing.assert_array_equal(assign_clusters(H).labels, [0, 1, 0])


def test_ari_examples():
    assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert adjusted_rand_index([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(-0.5)
    assert adjusted_rand_index([0, 0, 0], [0, 0, 0]) == 1.0
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 80), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_ari_matches_sklearn(n, ka, kb, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, ka, n), rng.integers(0, kb, n)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_silhouette_two_cliques():
    A = np.zeros((6, 6))
    A[:3, :3] = 1.0
    A[3:, 3:] = 1.0
    np.fill_diagonal(A, 0.0)
    per_cluster, per_vertex = silhouette_similarity(SymmetricMatrix(A), Clustering.from_labels([0, 0, 0, 1, 1, 1]))
    np.testing.assert_allclose(per_cluster, [1.0, 1.0])
    np.testing.assert_allclose(per_vertex, 1.0)


def loop_silhouette(A, labels):
    m = len(labels)
    out = np.zeros(m)
    for v in range(m):
        own = [u for u in range(m) if labels[u] == labels[v] and u != v]
        if not own:
            continue
        a = np.mean([A[v, u] for u in own])
        b = max(np.mean([A[v, u] for u in range(m) if labels[u] == l])
                for l in set(labels) if l != labels[v])
        if max(a, b) > 0:
            out[v] = (a - b) / max(a, b)
    return out


def test_silhouette_matches_loop_oracle():
    rng = np.random.default_rng(2)
    B = rng.random((25, 25))
    A = (B + B.T) / 2
    labels = rng.integers(0, 3, 25)
    labels[:4] = [0, 1, 2, 2]
    _, per_vertex = silhouette_similarity(SymmetricMatrix(A), Clustering.from_labels(labels))
    np.testing.assert_allclose(per_vertex, loop_silhouette(A, labels), atol=1e-12)


def test_silhouette_sign_agrees_with_distance_form():
    # similarity D_max - D flips a and b, so the sign of each score matches sklearn's
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((40, 2)) + np.repeat([[0, 0], [4, 0], [0, 4]], [14, 13, 13], axis=0)
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    labels = np.repeat([0, 1, 2], [14, 13, 13])
    c = D.max() - D
    np.fill_diagonal(c, 0.0)
    _, sim = silhouette_similarity(SymmetricMatrix(c), Clustering.from_labels(labels))
    ref = silhouette_samples(D, labels, metric="precomputed")
    np.testing.assert_array_equal(np.sign(sim), np.sign(ref))


def test_silhouette_sparse_dense_agree_and_empty_cluster():
    rng = np.random.default_rng(1)
    upper = np.triu(rng.random((30, 30)) < 0.3, 1)
    A = (upper | upper.T).astype(float)
    c = Clustering(rng.integers(0, 3, 30) * (np.arange(30) > 0), 4)
    dense = silhouette_similarity(SymmetricMatrix(A), c)
    sparse = silhouette_similarity(SymmetricMatrix(sp.csr_matrix(A)), c)
    np.testing.assert_allclose(dense[1], sparse[1])
    assert np.isnan(dense[0][3]) and np.isnan(sparse[0][3])


def test_silhouette_needs_two_clusters():
    with pytest.raises(ValueError):
        silhouette_similarity(SymmetricMatrix(np.ones((3, 3))), Clustering.from_labels([0, 0, 0]))


def test_label_round_trip(tmp_path):
    c = Clustering.from_labels([2, 0, 1, 1])
    write_labels(tmp_path / "l.csv", c)
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "vertex_id,label"
    np.testing.assert_array_equal(read_labels(tmp_path / "l.csv"), c.labels)


def test_read_labels_rejects_gaps(tmp_path):
    (tmp_path / "l.csv").write_text("vertex_id,label\n0,1\n2,0\n")
    with pytest.raises(ValueError):
        read_labels(tmp_path / "l.csv")


def test_metrics_json_nulls():
    payload = json.loads(metrics_json(0.5, np.array([0.25, np.nan]), [3, 0]))
    assert payload == {"ari": 0.5, "cluster_sizes": [3, 0], "per_cluster_silhouette": [0.25, None]}
