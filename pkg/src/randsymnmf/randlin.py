"""Randomized range finding, approximate truncated EVD and CholeskyQR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .matrix import LowRankOperator, multiply_dense

CHOLQR_JITTER = 1e-12
# a normalized residual below this means the basis already captures X
RESIDUAL_FLOOR = 1e-10


class CholeskyBreakdown(np.linalg.LinAlgError):
    """Gram matrix not numerically positive definite even after jitter."""


@dataclass
class RangeBasis:
    q_matrix: np.ndarray
    power_iters_used: int
    residual_estimate: float | None = None
    # normalized residual after each check (adaptive variant only)
    residual_history: list[float] = field(default_factory=list)
    # X @ Q for the returned basis when it was computed as a by-product
    xq: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ApproxEvd:
    u_matrix: np.ndarray
    eigenvalues: np.ndarray
    basis: RangeBasis

    def operator(self) -> LowRankOperator:
        return LowRankOperator(self.u_matrix, core=self.eigenvalues)


def orthonormalize(Y: np.ndarray) -> np.ndarray:
    Q, _ = sla.qr(Y, mode="economic", check_finite=False)
    return Q


def _check_sizes(m: int, r: int, rho: int) -> int:
    if r < 1:
        raise ValueError("target rank must be at least 1")
    if rho < 0:
        raise ValueError("oversampling must be nonnegative")
    l = r + rho
    if l > m:
        raise ValueError(f"sketch size {l} exceeds matrix dimension {m}")
    return l


def _sketch(X, l: int, rng: np.random.Generator) -> np.ndarray:
    omega = rng.standard_normal((X.dim, l))
    return orthonormalize(multiply_dense(X, omega))


def qb_residual_sq(x_fro_sq: float, B: np.ndarray) -> float:
    """``||X - QB||_F^2`` from ``||X||_F^2 - ||B||_F^2`` (valid for orthonormal Q), clamped at 0."""
    return max(x_fro_sq - float(np.einsum("ij,ij->", B, B)), 0.0)


def rrf(X, r: int, rho: int, q: int, rng: np.random.Generator, residual: bool = False) -> RangeBasis:
    """Randomized range finder for a symmetric matrix.

    Builds an orthonormal basis for ``(X X^T)^q X Omega`` with Gaussian
    ``Omega`` of width ``r + rho``, re-orthonormalizing after every product
    with ``X``.

    Parameters
    ----------
    X : SymmetricMatrix
    r, rho : int
        Target rank and oversampling.
    q : int
        Number of power iterations.
    rng : numpy.random.Generator
    residual : bool
        Also compute ``||QQ^T X - X||_F`` with one extra product.
    """
    if q < 0:
        raise ValueError("power iteration count must be nonnegative")
    l = _check_sizes(X.dim, r, rho)
    Q = _sketch(X, l, rng)
    for _ in range(q):
        Q = orthonormalize(multiply_dense(X, Q))
        Q = orthonormalize(multiply_dense(X, Q))
    basis = RangeBasis(Q, q)
    if residual:
        XQ = multiply_dense(X, Q)
        basis.residual_estimate = math.sqrt(qb_residual_sq(X.fro_norm_sq, XQ))
        basis.xq = XQ
    return basis


def ada_rrf(X, r: int, rho: int, q_max: int, tol: float, rng: np.random.Generator) -> RangeBasis:
    """Range finder that picks the number of power iterations adaptively.

    After each full power iteration the QB residual is evaluated from
    ``B^T = X Q`` alone. Iteration stops once the normalized residual
    decreases by less than ``tol`` or ``q_max`` iterations have been done.
    The returned basis is the one whose residual was checked last.
    """
    if q_max < 1:
        raise ValueError("q_max must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    l = _check_sizes(X.dim, r, rho)
    x_norm = math.sqrt(X.fro_norm_sq)
    Q = _sketch(X, l, rng)
    history: list[float] = []
    q = 0
    while True:
        Bt = multiply_dense(X, Q)
        res = math.sqrt(qb_residual_sq(X.fro_norm_sq, Bt))
        normalized = res / x_norm if x_norm > 0 else 0.0
        history.append(normalized)
        if normalized < RESIDUAL_FLOOR:
            break
        if len(history) > 1 and history[-2] - normalized < tol:
            break
        if q == q_max:
            break
        Q = orthonormalize(Bt)
        Q = orthonormalize(multiply_dense(X, Q))
        q += 1
    return RangeBasis(Q, q, res, history, Bt)


def apx_evd(X, r: int, rho: int, q: int | str, rng: np.random.Generator,
            q_max: int = 20, tol: float = 1e-3, basis: RangeBasis | None = None) -> ApproxEvd:
    """Approximate truncated eigendecomposition ``X ~ U diag(lam) U^T``.

    ``q`` is a power-iteration count or ``"adaptive"``. A precomputed
    ``basis`` may be supplied instead of drawing a new one. Eigenpairs are
    ordered by descending absolute eigenvalue.
    """
    if basis is None:
        if q == "adaptive":
            basis = ada_rrf(X, r, rho, q_max, tol, rng)
        else:
            basis = rrf(X, r, rho, int(q), rng)
    Q = basis.q_matrix
    XQ = basis.xq if basis.xq is not None else multiply_dense(X, Q)
    T = Q.T @ XQ
    T = (T + T.T) / 2
    evals, evecs = sla.eigh(T, check_finite=False)
    order = np.argsort(-np.abs(evals), kind="stable")
    U = Q @ evecs[:, order]
    return ApproxEvd(U, evals[order], basis)


def gram_cholesky(F: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor R of ``F^T F`` (so ``F = QR``).

    On a breakdown a jitter of ``1e-12 * tr(G) / k`` is added to the diagonal
    once before giving up with :class:`CholeskyBreakdown`.
    """
    G = F.T @ F
    G = (G + G.T) / 2
    try:
        R = sla.cholesky(G, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        k = G.shape[0]
        jitter = CHOLQR_JITTER * np.trace(G) / k
        try:
            R = sla.cholesky(G + jitter * np.eye(k), lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise CholeskyBreakdown("factor is numerically rank deficient") from exc
    if not np.all(np.isfinite(R)) or np.any(np.diag(R) <= 0):
        raise CholeskyBreakdown("factor is numerically rank deficient")
    return R


def triangular_inverse(R: np.ndarray) -> np.ndarray:
    # k x k inverse then a gemm; a right-sided trsm needs a Fortran copy of F
    # that costs more than the solve itself
    return sla.solve_triangular(R, np.eye(R.shape[0]), lower=False, check_finite=False)


def cholesky_qr(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of a tall matrix through the Cholesky factor of its Gram matrix."""
    F = np.asarray(F, dtype=np.float64)
    R = gram_cholesky(F)
    return F @ triangular_inverse(R), R
