import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randsymnmf.sampling import (SAMPLE_CONSTANT, LeverageScores, build_hybrid_plan, leverage_scores,
                                 theoretical_sample_count)


def skewed_factor(m, k, rng):
    F = rng.standard_normal((m, k))
    F[:k] *= 50.0
    return F


def test_leverage_scores_of_orthonormal_rows():
    Q = np.vstack([np.eye(3), np.zeros((4, 3))])
    np.testing.assert_allclose(leverage_scores(Q).values, [1, 1, 1, 0, 0, 0, 0], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 100), st.integers(1, 5), st.integers(0, 2**31))
def test_leverage_scores_match_householder(m, k, seed):
    k = min(k, m)
    F = np.random.default_rng(seed).standard_normal((m, k))
    scores = leverage_scores(F)
    Q, _ = np.linalg.qr(F)
    np.testing.assert_allclose(scores.values, np.sum(Q * Q, axis=1), atol=1e-9)
    assert scores.values.sum() == pytest.approx(k, rel=1e-9)
    assert np.all(scores.values <= 1 + 1e-9)
    assert scores.probabilities.sum() == pytest.approx(1.0, rel=1e-9)


def test_pure_random_plan_when_tau_is_one():
    rng = np.random.default_rng(0)
    scores = leverage_scores(rng.standard_normal((200, 4)))
    plan = build_hybrid_plan(scores, 50, 1.0, rng)
    assert plan.s_d == 0 and plan.s_r == 50
    assert plan.theta == 0.0 and plan.xi == 4
    np.testing.assert_allclose(plan.rand_weights, 1 / np.sqrt(50 * scores.probabilities[plan.rand_indices]))


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 200), st.integers(1, 6), st.integers(1, 60), st.sampled_from([1.0, 0.1, 1e-2, 1e-3]),
       st.integers(0, 2**31))
def test_hybrid_accounting(m, k, s, tau, seed):
    rng = np.random.default_rng(seed)
    scores = leverage_scores(skewed_factor(m, k, rng))
    plan = build_hybrid_plan(scores, s, tau, rng)
    assert plan.s_d + plan.s_r == s or plan.xi <= 1e-12
    assert abs(plan.theta + plan.xi - k) <= 1e-10
    assert not set(plan.det_indices) & set(plan.rand_indices)
    p = scores.probabilities
    if plan.s_d < s:
        assert np.all(p[plan.det_indices] >= tau)
    assert np.all(plan.rand_weights > 0)


def test_deterministic_rows_are_the_heaviest():
    rng = np.random.default_rng(1)
    scores = leverage_scores(skewed_factor(300, 4, rng))
    plan = build_hybrid_plan(scores, 40, 1 / 40, rng)
    assert set(plan.det_indices) == {0, 1, 2, 3}
    assert plan.s_r == 36
    assert plan.theta == pytest.approx(float(scores.values[:4].sum()))


def test_truncates_to_budget():
    scores = LeverageScores(np.full(10, 0.5), 5)
    plan = build_hybrid_plan(scores, 3, 0.05, np.random.default_rng(0))
    assert plan.s_d == 3 and plan.s_r == 0


def test_no_random_rows_when_mass_is_exhausted():
    scores = LeverageScores(np.array([1.0, 1.0, 0.0, 0.0]), 2)
    plan = build_hybrid_plan(scores, 4, 0.4, np.random.default_rng(0))
    assert plan.s_d == 2 and plan.s_r == 0 and plan.xi == 0


def test_sketch_is_unbiased_for_gram():
    rng = np.random.default_rng(2)
    F = skewed_factor(60, 3, rng)
    scores = leverage_scores(F)
    acc = np.zeros((3, 3))
    n = 4000
    for _ in range(n):
        plan = build_hybrid_plan(scores, 10, 0.2, rng)
        SF = plan.weights[:, None] * F[plan.indices]
        acc += SF.T @ SF
    ref = F.T @ F
    assert np.linalg.norm(acc / n - ref) <= 0.03 * np.linalg.norm(ref)


def test_same_seed_same_plan():
    scores = leverage_scores(np.random.default_rng(3).standard_normal((100, 3)))
    a = build_hybrid_plan(scores, 20, 0.05, np.random.default_rng(7))
    b = build_hybrid_plan(scores, 20, 0.05, np.random.default_rng(7))
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_plan_csv(tmp_path):
    scores = leverage_scores(skewed_factor(50, 2, np.random.default_rng(4)))
    plan = build_hybrid_plan(scores, 8, 0.1, np.random.default_rng(5))
    plan.write_csv(tmp_path / "plan.csv")
    rows = list(csv.DictReader((tmp_path / "plan.csv").open()))
    assert len(rows) == 8
    assert [r["kind"] for r in rows] == ["det"] * plan.s_d + ["rand"] * plan.s_r
    assert float(rows[-1]["weight"]) == plan.weights[-1]


def test_plan_argument_checks():
    scores = LeverageScores(np.ones(4) / 2, 2)
    with pytest.raises(ValueError):
        build_hybrid_plan(scores, 0, 0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_hybrid_plan(scores, 2, 0.0, np.random.default_rng(0))


def test_sample_constant_and_count():
    # oracle computed independently: 144 / (3 - 2 sqrt 2)
    assert SAMPLE_CONSTANT == pytest.approx(144 / (3 - 2 * math.sqrt(2)), rel=1e-14)
    assert SAMPLE_CONSTANT == pytest.approx(839.2935, abs=1e-4)
    assert theoretical_sample_count(6, 0.2, 0.5) == 17128
    assert theoretical_sample_count(1, 0.5, 0.5) == 582
    with pytest.raises(ValueError):
        theoretical_sample_count(0, 0.2, 0.5)
