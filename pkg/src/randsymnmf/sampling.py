"""Leverage scores and hybrid deterministic/random row-sampling plans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .randlin import gram_cholesky, triangular_inverse

SAMPLE_CONSTANT = 144.0 / (1.0 - math.sqrt(2.0)) ** 2
LEVERAGE_BLOCK_ROWS = 4096


@dataclass(frozen=True)
class LeverageScores:
    values: np.ndarray
    rank: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.values / self.rank


@dataclass(frozen=True)
class SamplingPlan:
    """Rows selected for a sketch ``S``.

    ``det_indices`` are kept with weight 1; ``rand_indices`` were drawn with
    replacement from the remaining rows and carry ``rand_weights``.
    """

    det_indices: np.ndarray
    rand_indices: np.ndarray
    rand_weights: np.ndarray
    theta: float
    xi: float
    tau: float
    scores: LeverageScores

    @property
    def s_d(self) -> int:
        return int(self.det_indices.size)

    @property
    def s_r(self) -> int:
        return int(self.rand_indices.size)

    @property
    def size(self) -> int:
        return self.s_d + self.s_r

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.det_indices, self.rand_indices])

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([np.ones(self.s_d), self.rand_weights])

    def sketch_matrix(self, m: int) -> np.ndarray:
        """Dense ``S`` (size x m); for tests on small problems."""
        S = np.zeros((self.size, m))
        S[np.arange(self.size), self.indices] = self.weights
        return S

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "kind", "weight", "leverage_score"])
            for i in self.det_indices:
                writer.writerow([int(i), "det", "%.17g" % 1.0, "%.17g" % self.scores.values[i]])
            for i, w in zip(self.rand_indices, self.rand_weights):
                writer.writerow([int(i), "rand", "%.17g" % w, "%.17g" % self.scores.values[i]])


def leverage_scores(F: np.ndarray) -> LeverageScores:
    """Squared row norms of an orthonormal basis of ``range(F)`` (via CholeskyQR)."""
    F = np.asarray(F, dtype=np.float64)
    r_inv = triangular_inverse(gram_cholesky(F))
    values = np.empty(F.shape[0])
    # blocks of Q = F R^{-1} stay in cache and are never stored whole
    for start in range(0, F.shape[0], LEVERAGE_BLOCK_ROWS):
        Q = F[start:start + LEVERAGE_BLOCK_ROWS] @ r_inv
        np.einsum("ij,ij->i", Q, Q, out=values[start:start + LEVERAGE_BLOCK_ROWS])
    return LeverageScores(values, F.shape[1])


def build_hybrid_plan(scores: LeverageScores, s: int, tau: float, rng: np.random.Generator) -> SamplingPlan:
    """Hybrid sampling plan with ``s`` rows in total.

    Rows with ``l_i / k >= tau`` are included deterministically (the ``s``
    largest if there are more than ``s``). The remaining budget is drawn with
    replacement from the other rows with probabilities ``l_i / xi`` where
    ``xi = k - theta`` and ``theta`` is the included leverage mass. Random
    rows get weight ``1 / sqrt(s_R * p_i)``. When ``xi <= 0`` no random rows
    are drawn.
    """
    if s < 1:
        raise ValueError("sample count must be at least 1")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    values = scores.values
    k = scores.rank
    det = np.flatnonzero(values / k >= tau)
    if det.size > s:
        order = np.argsort(-values[det], kind="stable")
        det = np.sort(det[order[:s]])
    theta = float(values[det].sum())
    xi = k - theta
    s_r = s - det.size

    if det.size:
        rest = np.ones(values.size, dtype=bool)
        rest[det] = False
        rest = np.flatnonzero(rest)
        rest_values = values[rest]
    else:
        rest, rest_values = None, values
    if xi <= 0 or rest_values.size == 0 or not rest_values.sum() > 0:
        s_r = 0
    if s_r > 0:
        # draw with the normalized distribution, weight with l_i / xi
        cdf = np.cumsum(rest_values)
        cdf /= cdf[-1]
        picks = np.searchsorted(cdf, rng.random(s_r), side="right")
        picks = np.minimum(picks, rest_values.size - 1)
        rand_idx = picks if rest is None else rest[picks]
        probs = values[rand_idx] / xi
        rand_w = 1.0 / np.sqrt(s_r * probs)
    else:
        rand_idx = np.zeros(0, dtype=np.intp)
        rand_w = np.zeros(0)
    return SamplingPlan(det.astype(np.intp), rand_idx.astype(np.intp), rand_w, theta, xi, float(tau), scores)


def theoretical_sample_count(k: int, delta: float, eps_r: float) -> int:
    """Sample count ``ceil(k * max(C ln(k/delta), 1/(delta eps_r)))`` with ``C = 144/(1-sqrt 2)^2``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not (0 < delta < 1 and 0 < eps_r < 1):
        raise ValueError("delta and eps_r must lie in (0, 1)")
    return math.ceil(k * max(SAMPLE_CONSTANT * math.log(k / delta), 1.0 / (delta * eps_r)))
