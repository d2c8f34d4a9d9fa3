"""Nonnegative update rules for ``min_{F >= 0} ||A F^T - B||`` written as Update(G, Y).

Every rule receives the k x k Gram matrix ``G = A^T A`` and the k x m cross
product ``Y = A^T B`` and returns the new m x k factor ``F``. Row j of ``F``
solves ``min_{x >= 0} x^T G x / 2 - x^T Y[:, j]``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .matrix import gram as gram_of

log = logging.getLogger(__name__)

MAX_RANK = 4096
BPP_MAX_ITERS = 5000
BPP_BACKUP_AFTER = 3
MU_FLOOR = 1e-16
BRUTEFORCE_MAX_K = 14
HALS_BLOCK_ROWS = 4096


class UpdateError(RuntimeError):
    """An update rule could not produce a solution."""


@dataclass
class UpdateProblem:
    """Inputs of one Update(G, Y) call.

    ``gram`` already includes any regularization and so does ``cross``
    unless ``anchor`` is given, in which case the right-hand side is
    ``cross + alpha * anchor^T`` and the sum is formed only where a rule needs
    it. ``current`` is the previous factor (m x k), needed by HALS and MU and
    used as a warm start by BPP.
    """

    gram: np.ndarray
    cross: np.ndarray
    alpha: float = 0.0
    current: np.ndarray | None = None
    anchor: np.ndarray | None = None

    def rhs(self) -> np.ndarray:
        """The full k x m right-hand side Y."""
        if self.anchor is None or not self.alpha:
            return self.cross
        return self.cross + self.alpha * self.anchor.T

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=np.float64)
        self.cross = np.asarray(self.cross, dtype=np.float64)
        k = self.gram.shape[0]
        if self.gram.shape != (k, k):
            raise ValueError("gram must be square")
        if k > MAX_RANK:
            raise ValueError(f"rank {k} exceeds supported maximum {MAX_RANK}")
        if self.cross.ndim != 2 or self.cross.shape[0] != k:
            raise ValueError(f"cross must have {k} rows, got shape {self.cross.shape}")
        scale = max(float(np.max(np.abs(self.gram))), np.finfo(float).tiny)
        if np.max(np.abs(self.gram - self.gram.T)) > 1e-12 * scale:
            raise ValueError("gram must be symmetric")
        if self.current is not None and self.current.shape != (self.cross.shape[1], k):
            raise ValueError("current factor has the wrong shape")
        if self.anchor is not None and self.anchor.shape != (self.cross.shape[1], k):
            raise ValueError("anchor has the wrong shape")


def regularized_problem(fixed: np.ndarray, products: np.ndarray, alpha: float,
                        current: np.ndarray | None = None) -> UpdateProblem:
    """Problem for ``min ||X - F fixed^T||^2 + alpha ||F - fixed||^2`` given ``products = X @ fixed``."""
    k = fixed.shape[1]
    G = gram_of(fixed) + alpha * np.eye(k)
    Y = (products + alpha * fixed).T
    return UpdateProblem(G, Y, alpha, current)


# ---------------------------------------------------------------------------
# block principal pivoting


def _solve_passive(G: np.ndarray, Y: np.ndarray, passive: np.ndarray, cols: np.ndarray, out: np.ndarray):
    """Solve the unconstrained normal equations on each column's passive set.

    Columns sharing a passive set are solved together.
    """
    if cols.size == 0:
        return
    patterns, groups = np.unique(passive[:, cols].T, axis=0, return_inverse=True)
    groups = np.asarray(groups).ravel()
    for g, pattern in enumerate(patterns):
        members = cols[groups == g]
        block = out[:, members]
        block[:] = 0.0
        if pattern.any():
            idx = np.flatnonzero(pattern)
            try:
                sol = sla.solve(G[np.ix_(idx, idx)], Y[np.ix_(idx, members)],
                                assume_a="pos", check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise UpdateError("gram matrix is singular on a passive set") from exc
            block[idx, :] = sol
        out[:, members] = block


def nnls_bpp(G: np.ndarray, Y: np.ndarray, init: np.ndarray | None = None) -> np.ndarray:
    """Solve ``min_{x >= 0} x^T G x / 2 - x^T y`` for every column y of ``Y``.

    Block principal pivoting with full exchanges. A column whose infeasible
    count has not improved for three exchanges falls back to exchanging a
    single variable (the one with the largest index), which guarantees
    termination.

    Parameters
    ----------
    G : (k, k) symmetric positive definite array
    Y : (k, n) array
    init : (k, n) array, optional
        Previous solution; its positive entries seed the passive sets.

    Returns
    -------
    (k, n) nonnegative array
    """
    k, n = Y.shape
    passive = np.zeros((k, n), dtype=bool) if init is None else init > 0
    X = np.zeros((k, n))
    all_cols = np.arange(n)
    _solve_passive(G, Y, passive, all_cols, X)
    grad = G @ X - Y
    grad[passive] = 0.0
    # dual feasibility tolerance, per column
    gtol = 1e-13 * (np.abs(Y).max(axis=0) + np.abs(G).max() * np.abs(X).max(axis=0) + np.finfo(float).tiny)

    infeasible = (passive & (X < 0)) | (~passive & (grad < -gtol))
    counts = infeasible.sum(axis=0)
    budget = np.full(n, BPP_BACKUP_AFTER)
    best = np.full(n, k + 1)
    iters = 0
    while True:
        active_cols = np.flatnonzero(counts > 0)
        if active_cols.size == 0:
            break
        iters += 1
        if iters > BPP_MAX_ITERS:
            raise UpdateError(f"block pivoting did not converge in {BPP_MAX_ITERS} iterations")
        c = counts[active_cols]
        improved = c < best[active_cols]
        patient = ~improved & (budget[active_cols] >= 1)
        backup = ~improved & ~patient

        full_cols = active_cols[improved | patient]
        best[active_cols[improved]] = c[improved]
        budget[active_cols[improved]] = BPP_BACKUP_AFTER
        budget[active_cols[patient]] -= 1
        passive[:, full_cols] ^= infeasible[:, full_cols]

        for j in active_cols[backup]:
            i = np.flatnonzero(infeasible[:, j])[-1]
            passive[i, j] = ~passive[i, j]

        _solve_passive(G, Y, passive, active_cols, X)
        g = G @ X[:, active_cols] - Y[:, active_cols]
        g[passive[:, active_cols]] = 0.0
        grad[:, active_cols] = g
        inf = (passive[:, active_cols] & (X[:, active_cols] < 0)) | (~passive[:, active_cols] & (g < -gtol[active_cols]))
        infeasible[:, active_cols] = inf
        counts[active_cols] = inf.sum(axis=0)
    np.maximum(X, 0.0, out=X)
    return X


def update_bpp(problem: UpdateProblem) -> np.ndarray:
    """Exact NLS update; returns the m x k factor."""
    init = None if problem.current is None else problem.current.T
    return nnls_bpp(problem.gram, problem.rhs(), init).T


# ---------------------------------------------------------------------------
# HALS


def _row_blocks(m: int):
    # rows are independent within a column update, so sweeping cache-sized
    # row blocks gives the same result as sweeping whole columns
    for start in range(0, m, HALS_BLOCK_ROWS):
        yield slice(start, min(start + HALS_BLOCK_ROWS, m))


def _hals_sweep(F0: np.ndarray, base: np.ndarray, G: np.ndarray, denom: np.ndarray,
                extra: np.ndarray | None = None, extra_coef: float = 0.0,
                overwrite: bool = False) -> tuple[np.ndarray, list[int]]:
    """Sequential column sweep ``f_i <- [(b_i - F g_i) / denom_i]_+``.

    ``b = base + extra_coef * extra``. ``g_i`` is column i of ``G`` with its
    diagonal entry removed, so the already updated columns of ``F`` enter
    every later column. Columns with ``denom_i <= 0`` are left unchanged.
    ``overwrite`` reuses ``F0`` for the result when it is a C-ordered float array.
    """
    k = G.shape[0]
    skipped = [i for i in range(k) if denom[i] <= 0]
    cols = [i for i in range(k) if denom[i] > 0]
    with np.errstate(divide="ignore", over="ignore"):
        scale = 1.0 / np.where(denom > 0, denom, 1.0)
    # fold the division into the gemv vector and the right-hand side, except
    # for subnormal denominators whose reciprocal overflows
    folded = np.isfinite(scale)
    scale = np.where(folded, scale, 1.0)
    unfolded = {i for i in cols if not folded[i]}
    Gs = G * scale[None, :]
    Gs[np.arange(k), np.arange(k)] = 0.0
    Gs_rows = np.ascontiguousarray(Gs.T)
    reuse = overwrite and F0.dtype == np.float64 and F0.flags.c_contiguous and F0.flags.writeable
    out = F0 if reuse else np.array(F0, dtype=np.float64, order="C")
    for rows in _row_blocks(out.shape[0]):
        F = out[rows]
        if extra is not None and extra_coef:
            B = extra[rows] * extra_coef
            B += base[rows]
        else:
            B = np.array(base[rows])
        B *= scale
        for i in cols:
            col = F @ Gs_rows[i]
            np.subtract(B[:, i], col, out=col)
            if i in unfolded:
                col /= denom[i]
            np.maximum(col, 0.0, out=F[:, i])
    return out, skipped


def update_hals(problem: UpdateProblem, overwrite: bool = False) -> tuple[np.ndarray, list[int]]:
    """One HALS sweep over the columns of ``problem.current`` in Update(G, Y) form.

    Column i becomes ``[f_i + (Y_i - F G_i) / G_ii]_+`` using the already
    updated columns. Columns with ``G_ii == 0`` are left unchanged and
    reported in the second return value. With ``overwrite`` the current
    factor's storage may be reused for the result.
    """
    if problem.current is None:
        raise ValueError("HALS needs the current factor")
    G = problem.gram
    out, skipped = _hals_sweep(problem.current, problem.cross.T, G, np.diag(G).copy(),
                                 extra=problem.anchor, extra_coef=problem.alpha, overwrite=overwrite)
    if skipped:
        log.warning("HALS skipped zero-norm columns %s", skipped)
    return out, skipped


def update_hals_symmetric(xh: np.ndarray, W: np.ndarray, H: np.ndarray, alpha: float) -> tuple[np.ndarray, list[int]]:
    """Sweep the columns of ``W`` for the regularized symmetric objective.

    ``w_i <- [((XH - W H^T H + alpha H)_i + ||h_i||^2 w_i) / (||h_i||^2 + alpha)]_+``
    with ``xh = X @ H`` formed once by the caller. The ``W H^T H`` column is
    evaluated with the columns updated so far. Update ``H`` by calling with
    ``(X @ W, H, W, alpha)``.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    hth = gram_of(H)
    out, skipped = _hals_sweep(W, xh, hth, np.diag(hth) + alpha, extra=H, extra_coef=alpha)
    if skipped:
        log.warning("HALS skipped columns with zero norm: %s", skipped)
    return out, skipped


def hals_sweep_reference(X: np.ndarray, W: np.ndarray, H: np.ndarray, alpha: float,
                         side: str = "w") -> np.ndarray:
    """Column-by-column HALS sweep with the explicit rank-one residual ``R_i`` (dense, O(m^2 k)).

    ``side="w"`` updates W with H fixed, ``side="h"`` updates H with W fixed.
    Intended as a slow reference for testing.
    """
    W = np.array(W, dtype=np.float64)
    H = np.array(H, dtype=np.float64)
    m, k = W.shape
    eye = np.eye(m)
    for i in range(k):
        R = X - W @ H.T + np.outer(W[:, i], H[:, i])
        if side == "w":
            h = H[:, i]
            W[:, i] = np.maximum((R + alpha * eye) @ h / (h @ h + alpha), 0.0)
        else:
            w = W[:, i]
            H[:, i] = np.maximum((R.T + alpha * eye) @ w / (w @ w + alpha), 0.0)
    return W if side == "w" else H


# ---------------------------------------------------------------------------
# multiplicative updates


def update_mu(problem: UpdateProblem) -> np.ndarray:
    """Multiplicative update ``F * Y^+ / (F G)`` with the denominator floored at 1e-16."""
    if problem.current is None:
        raise ValueError("multiplicative update needs the current factor")
    F = problem.current
    numer = np.maximum(problem.rhs().T, 0.0)
    denom = np.maximum(F @ problem.gram, MU_FLOOR)
    return F * numer / denom


# ---------------------------------------------------------------------------
# oracle


def nls_bruteforce(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``argmin_{x >= 0} ||A x - b||`` by enumerating every active set (k <= 14).

    For each candidate set of free variables the normal equations are solved;
    infeasible or rank-deficient candidates are dropped. Among feasible
    candidates the smallest residual wins, with ties going to the candidate
    with fewer zero-constrained variables.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    k = A.shape[1]
    if k > BRUTEFORCE_MAX_K:
        raise ValueError(f"brute force limited to k <= {BRUTEFORCE_MAX_K}, got {k}")
    G = A.T @ A
    y = A.T @ b
    best_x = np.zeros(k)
    best_res = float(b @ b)
    best_active = k
    tie = 1e-12 * max(best_res, 1.0)
    for size in range(1, k + 1):
        for free in itertools.combinations(range(k), size):
            idx = list(free)
            sub = G[np.ix_(idx, idx)]
            try:
                c = sla.cho_factor(sub, check_finite=False)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(sub) > 1e12:
                continue
            xf = sla.cho_solve(c, y[idx], check_finite=False)
            if np.any(xf < -1e-12 * max(1.0, np.abs(xf).max())):
                continue
            x = np.zeros(k)
            x[idx] = np.maximum(xf, 0.0)
            r = A @ x - b
            res = float(r @ r)
            active = k - size
            if res < best_res - tie or (abs(res - best_res) <= tie and active < best_active):
                best_x, best_res, best_active = x, res, active
    return best_x
