import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randsymnmf.datasets import planted_partition
from randsymnmf.eval import adjusted_rand_index, assign_clusters
from randsymnmf.matrix import LowRankOperator, SymmetricMatrix, normalize_graph
from randsymnmf.solvers import (METHODS, TRACE_COLUMNS, ConvergenceTrace, PerformanceWarning, SolverConfig,
                                TraceRecord, check_stop, factorize, fast_residual, initialize_factor,
                                normalized_residual, pgncg_step, projected_gradient_norm, sampled_problem,
                                surrogate_gradients, surrogate_objective, symnmf_gradient)


def random_sym(m, rng):
    A = rng.random((m, m))
    return SymmetricMatrix((A + A.T) / 2)


@pytest.fixture(scope="module")
def small_graph():
    A, labels = planted_partition(150, 3, 0.4, 0.02, np.random.default_rng(0))
    return normalize_graph(A), labels


# --- stopping rule ---------------------------------------------------------


def test_check_stop_needs_patience_plus_one_values():
    assert not check_stop([1.0, 1.0, 1.0, 1.0], tol=1e-4, patience=4)
    assert check_stop([1.0, 1.0, 1.0, 1.0, 1.0], tol=1e-4, patience=4)


def test_check_stop_any_large_decrease_blocks():
    flat = [0.5, 0.49999, 0.49998, 0.49997]
    assert check_stop([0.9] + flat, tol=1e-4, patience=3)
    assert not check_stop([0.9] + flat, tol=1e-4, patience=4)
    assert not check_stop([0.5, 0.4, 0.39999, 0.39998, 0.39997], tol=1e-4, patience=4)


def test_check_stop_accepts_trace():
    trace = ConvergenceTrace()
    for i, r in enumerate([0.3, 0.3, 0.3], start=1):
        trace.append(TraceRecord(i, float(i), r, None, "full"))
    assert check_stop(trace, 1e-4, 2)


def test_trace_must_advance():
    trace = ConvergenceTrace()
    trace.append(TraceRecord(1, 1.0, 0.5, None, "full"))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(1, 2.0, 0.5, None, "full"))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(2, 0.5, 0.5, None, "full"))


def test_trace_csv_layout():
    trace = ConvergenceTrace()
    trace.append(TraceRecord(1, 0.25, 0.5, 0.125, "full", s_d=2, s_r=3, theta=0.75))
    text = trace.to_csv(timing=False)
    header, row = text.splitlines()
    assert header.split(",") == list(TRACE_COLUMNS)
    assert row == "1,,0.5,0.125,full,2,3,0.75,"
    assert trace.to_csv().splitlines()[1].startswith("1,0.25,")


# --- residuals and gradients -------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 200), st.integers(1, 6), st.integers(0, 2**31))
def test_fast_residual_matches_direct(m, k, seed):
    rng = np.random.default_rng(seed)
    X = random_sym(m, rng)
    W, H = rng.random((m, k)), rng.random((m, k))
    direct = np.linalg.norm(X.toarray() - W @ H.T) / math.sqrt(X.fro_norm_sq)
    fast = fast_residual(X.fro_norm_sq, W.T @ W, H.T @ H, W, X @ H)
    assert fast == pytest.approx(direct, rel=1e-8)
    assert normalized_residual(X, H) == pytest.approx(np.linalg.norm(X.toarray() - H @ H.T)
                                                      / math.sqrt(X.fro_norm_sq), rel=1e-8)


def test_fast_residual_clamps_at_zero():
    H = np.array([[1.0], [2.0]])
    X = SymmetricMatrix(H @ H.T)
    assert normalized_residual(X, H) == pytest.approx(0.0, abs=1e-7)


def central_difference(f, F, h=1e-6):
    grad = np.zeros_like(F)
    for idx in np.ndindex(F.shape):
        E = np.zeros_like(F)
        E[idx] = h
        grad[idx] = (f(F + E) - f(F - E)) / (2 * h)
    return grad


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = random_sym(12, rng)
    A = X.toarray()
    W, H = rng.random((12, 2)), rng.random((12, 2))
    sym = central_difference(lambda F: np.linalg.norm(A - F @ F.T) ** 2, H)
    np.testing.assert_allclose(symnmf_gradient(X, H), sym, rtol=1e-6)
    gw, gh = surrogate_gradients(X, W, H)
    np.testing.assert_allclose(gw, central_difference(lambda F: np.linalg.norm(A - F @ H.T) ** 2, W), rtol=1e-6)
    np.testing.assert_allclose(gh, central_difference(lambda F: np.linalg.norm(A - W @ F.T) ** 2, H), rtol=1e-6)


def test_projected_gradient_zero_at_stationary_point():
    # H = 0 with X having no positive entry pairing: gradient is 4 (0 - X 0) = 0
    X = SymmetricMatrix(np.eye(3))
    assert projected_gradient_norm(X, np.zeros((3, 2))) == 0.0
    H = np.array([[1.0, 0.0], [0.0, 0.0]])
    # gradient positive on a zero entry is dropped
    X2 = SymmetricMatrix(np.array([[1.0, -1.0], [-1.0, 0.0]]))
    g = symnmf_gradient(X2, H)
    keep = (g < 0) | (H > 0)
    assert projected_gradient_norm(X2, H) == pytest.approx(np.linalg.norm(g[keep]))


def test_surrogate_objective_direct():
    rng = np.random.default_rng(1)
    X = random_sym(9, rng)
    W, H = rng.random((9, 2)), rng.random((9, 2))
    direct = np.linalg.norm(X.toarray() - W @ H.T) ** 2 + 0.7 * np.linalg.norm(W - H) ** 2
    assert surrogate_objective(X, W, H, 0.7) == pytest.approx(direct, rel=1e-10)


def test_pgncg_step_solves_gauss_newton_system():
    rng = np.random.default_rng(2)
    m, k = 10, 2
    X = random_sym(m, rng)
    H = rng.random((m, k)) + 0.5
    hth = H.T @ H
    # dense Gauss-Newton matrix from the operator P -> 2 (P H^T H + H P^T H)
    n = m * k
    M = np.zeros((n, n))
    for j in range(n):
        P = np.zeros(n)
        P[j] = 1.0
        P = P.reshape(m, k)
        M[:, j] = (2.0 * (P @ hth + H @ (P.T @ H))).ravel()
    rhs = (-2.0 * (X @ H - H @ hth)).ravel()
    Z = np.linalg.lstsq(M, rhs, rcond=None)[0].reshape(m, k)
    out = pgncg_step(X @ H, H, cg_iters=200, cg_tol=1e-14)
    np.testing.assert_allclose(out, np.maximum(H - Z, 0.0), atol=1e-6)


def test_pgncg_step_fixed_point():
    H = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    X = SymmetricMatrix(H @ H.T)
    np.testing.assert_allclose(pgncg_step(X @ H, H), H)


# --- initialization and configuration ---------------------------------------


def test_initialize_scale_and_zero_mean():
    X = SymmetricMatrix(np.full((50, 50), 0.5))
    H = initialize_factor(X, 4, np.random.default_rng(0))
    assert H.min() >= 0 and H.max() < 2 * math.sqrt(0.5 / 4)
    with pytest.warns(RuntimeWarning):
        assert not initialize_factor(SymmetricMatrix(np.zeros((3, 3))), 2, np.random.default_rng(0)).any()
    with pytest.raises(ValueError):
        initialize_factor(SymmetricMatrix(-np.ones((3, 3))), 2, np.random.default_rng(0))


@pytest.mark.parametrize("kwargs", [dict(method="nope"), dict(rank=0), dict(alpha=-1.0), dict(tol=0.0),
                                    dict(samples=1.5), dict(samples=0), dict(tau=0.0), dict(q=-1)])
def test_config_rejects(kwargs):
    args = dict(rank=2)
    args.update(kwargs)
    with pytest.raises(ValueError):
        SolverConfig(**args)


def test_config_derived_values():
    cfg = SolverConfig(rank=4, method="lvs-hals", samples=0.05)
    assert cfg.family == "lvs" and cfg.rule == "hals"
    assert cfg.sample_count(1000) == 50
    assert cfg.tau_value(50) == 1 / 50
    assert cfg.rho_value() == 8
    assert SolverConfig(rank=4, samples=30).sample_count(1000) == 30
    assert SolverConfig(rank=1).family == "full"
    assert SolverConfig(rank=1, alpha="auto").alpha_value(SymmetricMatrix(np.diag([3.0, 1.0]))) == 3.0


# --- drivers ---------------------------------------------------------------


@pytest.mark.parametrize("method", METHODS)
def test_every_method_runs_and_decreases_residual(method, small_graph):
    X, labels = small_graph
    cfg = SolverConfig(rank=3, method=method, seed=1, max_iters=60, samples=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerformanceWarning)
        H, trace = factorize(X, cfg)
    assert H.shape == (150, 3) and H.min() >= 0
    res = trace.residuals()
    assert res[-1] < res[0] + 1e-12
    assert res[-1] < 0.9
    if method in ("anls-bpp", "hals", "pgncg"):
        assert adjusted_rand_index(assign_clusters(H), labels) == 1.0


def test_same_seed_identical_results(small_graph):
    X, _ = small_graph
    for method in ("hals", "lai-bpp", "lvs-hals", "comp-hals"):
        cfg = SolverConfig(rank=3, method=method, seed=5, max_iters=20)
        H1, t1 = factorize(X, cfg)
        H2, t2 = factorize(X, cfg)
        assert np.array_equal(H1, H2)
        assert t1.to_csv(timing=False) == t2.to_csv(timing=False)


def test_refine_phase_recorded(small_graph):
    X, _ = small_graph
    H, trace = factorize(X, SolverConfig(rank=3, method="lai-hals", refine=True, max_iters=50))
    phases = [r.phase for r in trace.records]
    assert phases[0] == "lai" and phases[-1] == "refine"
    assert phases == sorted(phases, key=["lai", "refine"].index)


def test_lvs_trace_sampling_columns(small_graph):
    X, _ = small_graph
    cfg = SolverConfig(rank=3, method="lvs-bpp", samples=30, max_iters=5, tol=1e-12)
    _, trace = factorize(X, cfg)
    for r in trace.records:
        assert r.s_d + r.s_r == 30
        assert 0.0 <= r.theta <= 3.0


def test_lvs_dense_input_warns():
    A, _ = planted_partition(60, 2, 0.5, 0.05, np.random.default_rng(1))
    X = SymmetricMatrix(A.toarray())
    with pytest.warns(PerformanceWarning):
        factorize(X, SolverConfig(rank=2, method="lvs-hals", max_iters=2))


def test_sampled_problem_with_all_rows_is_exact():
    rng = np.random.default_rng(3)
    X = random_sym(20, rng)
    H = rng.random((20, 3))
    # tau small enough that every row is deterministic
    problem, plan = sampled_problem(X, H, H, 20, 1e-9, 0.5, rng)
    assert plan.s_d == 20
    np.testing.assert_allclose(problem.gram, H.T @ H + 0.5 * np.eye(3), atol=1e-12)
    np.testing.assert_allclose(problem.rhs(), (X @ H + 0.5 * H).T, atol=1e-12)


def test_pgncg_accepts_low_rank_operator():
    rng = np.random.default_rng(4)
    H0 = rng.random((40, 2))
    op = LowRankOperator(H0, core=np.eye(2))
    H, trace = factorize(op, SolverConfig(rank=2, method="pgncg", max_iters=400, tol=1e-10))
    assert trace.residuals()[-1] < 1e-3


def test_hals_and_mu_sweeps_monotone():
    from randsymnmf.update import regularized_problem, update_hals_symmetric, update_mu

    rng = np.random.default_rng(5)
    X = random_sym(25, rng)
    W = H = rng.random((25, 3))
    alpha = 0.5
    for _ in range(20):
        before = surrogate_objective(X, W, H, alpha)
        W = update_hals_symmetric(X @ H, W, H, alpha)[0]
        H = update_mu(regularized_problem(W, X @ W, alpha, H))
        assert surrogate_objective(X, W, H, alpha) <= before + 1e-12 * max(1.0, before)
