"""SymNMF drivers: full-data ANLS/HALS, PGNCG, low-rank-input, compressed and leverage-score-sampled variants."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matrix import LowRankOperator, SymmetricMatrix, gather_rows, gram
from .randlin import ada_rrf, apx_evd, rrf
from .sampling import build_hybrid_plan, leverage_scores
from .update import (UpdateProblem, regularized_problem, update_bpp, update_hals,
                     update_hals_symmetric, update_mu)

AUTO = "auto"
ADAPTIVE = "adaptive"

METHODS = ("anls-bpp", "hals", "pgncg", "lai-bpp", "lai-hals", "lai-pgncg",
           "comp-bpp", "comp-hals", "lvs-bpp", "lvs-hals")

TRACE_COLUMNS = ("iter", "time_s", "norm_residual", "proj_grad", "phase",
                 "s_d", "s_r", "theta", "proj_grad_sym")


class SolverError(RuntimeError):
    """A driver could not complete."""


class PerformanceWarning(UserWarning):
    pass


@dataclass
class SolverConfig:
    """Settings for one SymNMF run.

    ``samples`` is a fraction of the rows when given as a float and a row
    count when given as an int. ``alpha``, ``rho`` and ``tau`` accept
    ``"auto"``; ``q`` accepts ``"adaptive"``.
    """

    rank: int
    method: str = "hals"
    alpha: float | str = AUTO
    max_iters: int = 500
    tol: float = 1e-4
    patience: int = 4
    rho: int | str = AUTO
    q: int | str = ADAPTIVE
    q_max: int = 20
    rrf_tol: float = 1e-3
    samples: float | int = 0.05
    tau: float | str = AUTO
    cg_iters: int = 20
    cg_tol: float = 1e-6
    refine: bool = False
    seed: int = 0
    track_gradient: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}', expected one of {', '.join(METHODS)}")
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError("rank must be a positive integer")
        if self.alpha != AUTO and not (isinstance(self.alpha, (int, float)) and self.alpha > 0):
            raise ValueError("alpha must be positive or 'auto'")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.rho != AUTO and (int(self.rho) != self.rho or self.rho < 0):
            raise ValueError("rho must be a nonnegative integer or 'auto'")
        if self.q != ADAPTIVE and (int(self.q) != self.q or self.q < 0):
            raise ValueError("q must be a nonnegative integer or 'adaptive'")
        if self.q_max < 1 or not self.rrf_tol > 0:
            raise ValueError("q_max must be >= 1 and rrf_tol positive")
        if isinstance(self.samples, bool):
            raise ValueError("samples must be a fraction or a count")
        if isinstance(self.samples, (int, np.integer)):
            if self.samples < 1:
                raise ValueError("sample count must be at least 1")
        elif not 0 < self.samples <= 1:
            raise ValueError("sample fraction must lie in (0, 1]")
        if self.tau != AUTO and not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1] or be 'auto'")
        if self.cg_iters < 1 or not self.cg_tol > 0:
            raise ValueError("cg_iters must be >= 1 and cg_tol positive")

    @property
    def family(self) -> str:
        return self.method.split("-")[0] if "-" in self.method else "full"

    @property
    def rule(self) -> str:
        return self.method.split("-")[-1]

    def rho_value(self) -> int:
        return 2 * self.rank if self.rho == AUTO else int(self.rho)

    def sample_count(self, m: int) -> int:
        if isinstance(self.samples, (int, np.integer)):
            return int(self.samples)
        return math.ceil(self.samples * m)

    def tau_value(self, s: int) -> float:
        return 1.0 / s if self.tau == AUTO else float(self.tau)

    def alpha_value(self, X: SymmetricMatrix) -> float:
        if self.alpha != AUTO:
            return float(self.alpha)
        alpha = X.max()
        if alpha <= 0:
            raise ValueError("automatic alpha needs a matrix with a positive entry")
        return alpha

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# traces


@dataclass
class TraceRecord:
    iteration: int
    time_s: float
    norm_residual: float
    proj_grad: float | None
    phase: str
    s_d: int | None = None
    s_r: int | None = None
    theta: float | None = None
    proj_grad_sym: float | None = None


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.iteration <= last.iteration or record.time_s < last.time_s:
                raise ValueError("trace records must advance in iteration and time")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last_iteration(self) -> int:
        return self.records[-1].iteration if self.records else 0

    def residuals(self, phase: str | None = None) -> list[float]:
        return [r.norm_residual for r in self.records if phase is None or r.phase == phase]

    def to_csv(self, path=None, timing: bool = True) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (int, np.integer, str)):
                return str(v)
            return "%.17g" % v

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow([r.iteration, fmt(r.time_s) if timing else "", fmt(r.norm_residual),
                             fmt(r.proj_grad), r.phase, fmt(r.s_d), fmt(r.s_r), fmt(r.theta),
                             fmt(r.proj_grad_sym)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


class _Clock:
    """Accumulates time spent inside timed sections only."""

    def __init__(self):
        self.elapsed = 0.0
        self._t0 = None

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed += time.perf_counter() - self._t0
        self._t0 = None


def check_stop(trace, tol: float = 1e-4, patience: int = 4) -> bool:
    """True when each of the last ``patience`` residual decreases is below ``tol``.

    ``trace`` is a :class:`ConvergenceTrace` or a sequence of residuals.
    """
    residuals = trace.residuals() if isinstance(trace, ConvergenceTrace) else list(trace)
    if len(residuals) < patience + 1:
        return False
    recent = residuals[-(patience + 1):]
    return all(recent[j] - recent[j + 1] < tol for j in range(patience))


# ---------------------------------------------------------------------------
# residuals and gradients


def fast_residual(x_fro_sq: float, gram_w: np.ndarray, gram_h: np.ndarray,
                  w: np.ndarray, xh: np.ndarray) -> float:
    """Normalized ``||X - W H^T||_F / ||X||_F`` from cached products.

    Uses ``tr(X^T X) + tr(W^T W H^T H) - 2 tr(W^T X H)`` with ``xh = X @ H``;
    the squared residual is clamped at zero before the square root.
    """
    res_sq = x_fro_sq + float(np.sum(gram_w * gram_h)) - 2.0 * float(np.sum(w * xh))
    res = math.sqrt(max(res_sq, 0.0))
    if x_fro_sq <= 0:
        return 0.0 if res == 0 else math.inf
    return res / math.sqrt(x_fro_sq)


def normalized_residual(X, H: np.ndarray) -> float:
    """``||X - H H^T||_F / ||X||_F`` with one product ``X @ H``."""
    hth = gram(H)
    return fast_residual(X.fro_norm_sq, hth, hth, H, X @ H)


def symnmf_gradient(X, H: np.ndarray, xh: np.ndarray | None = None) -> np.ndarray:
    """Gradient ``4 (H H^T - X) H`` of ``||X - H H^T||_F^2``."""
    if xh is None:
        xh = X @ H
    return 4.0 * (H @ gram(H) - xh)


def surrogate_gradients(X, W: np.ndarray, H: np.ndarray, xh=None, xw=None):
    """Gradients of ``||X - W H^T||_F^2`` with respect to W and H (X symmetric)."""
    if xh is None:
        xh = X @ H
    if xw is None:
        xw = X @ W
    return 2.0 * (W @ gram(H) - xh), 2.0 * (H @ gram(W) - xw)


def _projected_norm_sq(grad: np.ndarray, F: np.ndarray) -> float:
    keep = (grad < 0) | (F > 0)
    return float(np.sum(np.where(keep, grad, 0.0) ** 2))


def projected_gradient_norm(X, H: np.ndarray, W: np.ndarray | None = None,
                            xh: np.ndarray | None = None, xw: np.ndarray | None = None) -> float:
    """KKT-aware gradient norm.

    With ``W`` given, the two-factor objective ``||X - W H^T||`` is used;
    otherwise the symmetric objective ``||X - H H^T||``. Gradient entries are
    kept where they are negative or the factor entry is positive.
    """
    if W is None:
        return math.sqrt(_projected_norm_sq(symnmf_gradient(X, H, xh), H))
    gw, gh = surrogate_gradients(X, W, H, xh, xw)
    return math.sqrt(_projected_norm_sq(gw, W) + _projected_norm_sq(gh, H))


def surrogate_objective(X, W: np.ndarray, H: np.ndarray, alpha: float) -> float:
    """``||X - W H^T||_F^2 + alpha ||W - H||_F^2``."""
    res_sq = X.fro_norm_sq + float(np.sum(gram(W) * gram(H))) - 2.0 * float(np.sum(W * (X @ H)))
    return res_sq + alpha * float(np.sum((W - H) ** 2))


# ---------------------------------------------------------------------------
# initialization


def initialize_factor(X, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform [0, 1) entries scaled by ``2 sqrt(zeta / k)`` with ``zeta`` the mean of X."""
    zeta = X.mean()
    if zeta < 0:
        raise ValueError("initialization needs a matrix with nonnegative mean")
    if zeta == 0:
        warnings.warn("matrix mean is zero; initial factor is all zeros", RuntimeWarning, stacklevel=2)
    return rng.random((X.dim, k)) * (2.0 * math.sqrt(zeta / k))


def _streams(seed: int):
    init, sketch, sample = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(sketch), np.random.default_rng(sample))


# ---------------------------------------------------------------------------
# loops


def _apply_rule(rule: str, fixed: np.ndarray, products: np.ndarray, alpha: float, current: np.ndarray):
    if rule == "hals":
        return update_hals_symmetric(products, current, fixed, alpha)[0]
    problem = regularized_problem(fixed, products, alpha, current)
    if rule == "bpp":
        return update_bpp(problem)
    if rule == "mu":
        return update_mu(problem)
    raise ValueError(f"unknown update rule '{rule}'")


def _apply_problem(rule: str, problem: UpdateProblem, overwrite: bool = False):
    if rule == "hals":
        return update_hals(problem, overwrite=overwrite)[0]
    if rule == "bpp":
        return update_bpp(problem)
    if rule == "mu":
        return update_mu(problem)
    raise ValueError(f"unknown update rule '{rule}'")


def _record(trace, clock, phase, H, W, xh, xw, x_fro_sq, track, **extra):
    hth = gram(H)
    res = fast_residual(x_fro_sq, hth, hth, H, xh)
    pg = pgs = None
    if track:
        pgs = math.sqrt(_projected_norm_sq(4.0 * (H @ hth - xh), H))
        if W is not None:
            gw = 2.0 * (W @ hth - xh)
            gh = 2.0 * (H @ gram(W) - xw)
            pg = math.sqrt(_projected_norm_sq(gw, W) + _projected_norm_sq(gh, H))
        else:
            pg = pgs
    trace.append(TraceRecord(trace.last_iteration + 1, clock.elapsed, res, pg, phase,
                             proj_grad_sym=pgs, **extra))


def _alternating_loop(A, W, H, alpha, rule, cfg, trace, clock, phase):
    """Two-factor alternating updates against a symmetric operator ``A``."""
    with clock:
        xh = A @ H
    start = len(trace)
    for _ in range(cfg.max_iters):
        with clock:
            W = _apply_rule(rule, H, xh, alpha, W)
            xw = A @ W
            H = _apply_rule(rule, W, xw, alpha, H)
            xh = A @ H
        _record(trace, clock, phase, H, W, xh, xw, A.fro_norm_sq, cfg.track_gradient)
        if check_stop(trace.residuals()[start:], cfg.tol, cfg.patience):
            break
    return W, H


def pgncg_step(xh: np.ndarray, H: np.ndarray, cg_iters: int = 20, cg_tol: float = 1e-6) -> np.ndarray:
    """One projected Gauss-Newton step for ``||X - H H^T||_F^2`` given ``xh = X @ H``.

    The Gauss-Newton system is solved by conjugate gradients using the
    operator ``P -> 2 (P H^T H + H P^T H)``; the step is then projected onto
    the nonnegative orthant.
    """
    hth = gram(H)
    R = -2.0 * (xh - H @ hth)
    Z = np.zeros_like(H)
    P = R.copy()
    e_old = float(np.sum(R * R))
    e_first = e_old
    if e_first == 0.0:
        return H.copy()
    for _ in range(cg_iters):
        Y = 2.0 * (P @ hth + H @ (P.T @ H))
        curvature = float(np.sum(P * Y))
        if curvature <= 0.0:
            break
        step = e_old / curvature
        Z += step * P
        R -= step * Y
        e_new = float(np.sum(R * R))
        if math.sqrt(e_new) <= cg_tol * math.sqrt(e_first):
            break
        P = R + (e_new / e_old) * P
        e_old = e_new
    return np.maximum(H - Z, 0.0)


def _pgncg_loop(A, H, cfg, trace, clock, phase):
    with clock:
        xh = A @ H
    start = len(trace)
    for _ in range(cfg.max_iters):
        with clock:
            H = pgncg_step(xh, H, cfg.cg_iters, cfg.cg_tol)
            xh = A @ H
        _record(trace, clock, phase, H, None, xh, None, A.fro_norm_sq, cfg.track_gradient)
        if check_stop(trace.residuals()[start:], cfg.tol, cfg.patience):
            break
    return H


def _check_method(cfg: SolverConfig, family: str):
    if cfg.family != family:
        raise ValueError(f"method '{cfg.method}' does not belong to this driver")


# ---------------------------------------------------------------------------
# drivers


def symnmf_anls(X: SymmetricMatrix, cfg: SolverConfig, rule: str | None = None):
    """Regularized alternating updates on the full matrix.

    Solves ``min ||X - W H^T||^2 + alpha ||W - H||^2`` alternately for W and H
    with the update rule of ``cfg.method`` (BPP for ``anls-bpp``, HALS for
    ``hals``) and returns ``(H, trace)``.
    """
    if rule is None:
        if cfg.method not in ("anls-bpp", "hals"):
            raise ValueError(f"method '{cfg.method}' does not belong to this driver")
        rule = cfg.rule
    rng_init, _, _ = _streams(cfg.seed)
    alpha = cfg.alpha_value(X)
    clock = _Clock()
    with clock:
        H = initialize_factor(X, cfg.rank, rng_init)
    trace = ConvergenceTrace()
    _, H = _alternating_loop(X, H.copy(), H, alpha, rule, cfg, trace, clock, "full")
    return H, trace


def symnmf_hals(X: SymmetricMatrix, cfg: SolverConfig):
    return symnmf_anls(X, cfg, rule="hals")


def symnmf_pgncg(X, cfg: SolverConfig):
    """Projected Gauss-Newton with CG inner solves; ``X`` may be a low-rank operator."""
    rng_init, _, _ = _streams(cfg.seed)
    clock = _Clock()
    with clock:
        H = initialize_factor(X, cfg.rank, rng_init)
    trace = ConvergenceTrace()
    H = _pgncg_loop(X, H, cfg, trace, clock, "full")
    return H, trace


def _range_basis(X, cfg, rng):
    if cfg.q == ADAPTIVE:
        return ada_rrf(X, cfg.rank, cfg.rho_value(), cfg.q_max, cfg.rrf_tol, rng)
    return rrf(X, cfg.rank, cfg.rho_value(), int(cfg.q), rng)


def lai_symnmf(X: SymmetricMatrix, cfg: SolverConfig):
    """SymNMF against an approximate truncated EVD ``U diag(lam) U^T`` of X.

    Iterations of the ``lai`` phase see only the factored operator; their
    residuals are measured against it. With ``cfg.refine`` the run continues
    on the full matrix in a ``refine`` phase.
    """
    _check_method(cfg, "lai")
    rng_init, rng_sketch, _ = _streams(cfg.seed)
    alpha = cfg.alpha_value(X)
    clock = _Clock()
    with clock:
        evd = apx_evd(X, cfg.rank, cfg.rho_value(), cfg.q, rng_sketch, cfg.q_max, cfg.rrf_tol,
                      basis=_range_basis(X, cfg, rng_sketch))
        op = evd.operator()
        H = initialize_factor(X, cfg.rank, rng_init)
    trace = ConvergenceTrace()
    W = None
    if cfg.rule == "pgncg":
        H = _pgncg_loop(op, H, cfg, trace, clock, "lai")
    else:
        W, H = _alternating_loop(op, H.copy(), H, alpha, cfg.rule, cfg, trace, clock, "lai")
    if cfg.refine:
        H, trace = iterative_refinement(X, W, H, cfg, trace=trace, clock=clock)
    return H, trace


def compressed_symnmf(X: SymmetricMatrix, cfg: SolverConfig):
    """Alternating updates on the compressed problems ``min ||Q^T (X - W H^T)||``.

    A single range basis Q is drawn; the Gram uses the projected factor
    ``(Q^T W)^T (Q^T W)`` and the cross term ``(Q^T W)^T (Q^T X)``. Trace
    residuals are measured against ``Q Q^T X Q Q^T``.
    """
    _check_method(cfg, "comp")
    rng_init, rng_sketch, _ = _streams(cfg.seed)
    alpha = cfg.alpha_value(X)
    k = cfg.rank
    clock = _Clock()
    with clock:
        Q = _range_basis(X, cfg, rng_sketch).q_matrix
        B = (X @ Q).T
        op = LowRankOperator(Q, core=(B @ Q + (B @ Q).T) / 2)
        H = initialize_factor(X, k, rng_init)
        W = H.copy()

    def side(fixed, current):
        qf = Q.T @ fixed
        G = gram(qf) + alpha * np.eye(k)
        Y = qf.T @ B + alpha * fixed.T
        return _apply_problem(cfg.rule, UpdateProblem(G, Y, alpha, current))

    trace = ConvergenceTrace()
    for _ in range(cfg.max_iters):
        with clock:
            W = side(H, W)
            H = side(W, H)
        _record(trace, clock, "lai", H, W, op @ H, op @ W, op.fro_norm_sq, cfg.track_gradient)
        if check_stop(trace, cfg.tol, cfg.patience):
            break
    if cfg.refine:
        H, trace = iterative_refinement(X, W, H, cfg, trace=trace, clock=clock)
    return H, trace


def sampled_problem(X: SymmetricMatrix, fixed: np.ndarray, current: np.ndarray, s: int, tau: float,
                    alpha: float, rng: np.random.Generator):
    """Leverage-score sketched Update(G, Y) problem for the factor paired with ``fixed``.

    Returns the problem and the sampling plan that produced it.
    """
    k = fixed.shape[1]
    plan = build_hybrid_plan(leverage_scores(fixed), s, tau, rng)
    sf = gather_rows(fixed, plan)
    sx = gather_rows(X, plan)
    G = gram(sf) + alpha * np.eye(k)
    # alpha * fixed goes in as the anchor so HALS can add it block by block
    Yt = np.asarray(sx.T @ sf)
    return UpdateProblem(G, Yt.T, alpha, current, anchor=fixed), plan


def lvs_symnmf(X: SymmetricMatrix, cfg: SolverConfig):
    """Alternating updates on leverage-score sampled least-squares problems.

    Each side samples rows of the fixed factor and the matching rows of X
    with a hybrid plan (threshold ``tau``). The trace's sampling columns
    describe the plan built from H (used to update W). Trace residuals are
    exact and their cost is excluded from the recorded time.
    """
    _check_method(cfg, "lvs")
    if not X.is_sparse:
        warnings.warn("leverage-score sampling copies full rows of a dense matrix; expect little speedup",
                      PerformanceWarning, stacklevel=2)
    rng_init, _, rng_sample = _streams(cfg.seed)
    alpha = cfg.alpha_value(X)
    s = cfg.sample_count(X.dim)
    tau = cfg.tau_value(s)
    clock = _Clock()
    with clock:
        H = initialize_factor(X, cfg.rank, rng_init)
        W = H.copy()
    trace = ConvergenceTrace()
    for _ in range(cfg.max_iters):
        with clock:
            # the previous W and H are not needed again, so HALS may update them in place
            problem, plan = sampled_problem(X, H, W, s, tau, alpha, rng_sample)
            W = _apply_problem(cfg.rule, problem, overwrite=True)
            problem, _ = sampled_problem(X, W, H, s, tau, alpha, rng_sample)
            H = _apply_problem(cfg.rule, problem, overwrite=True)
        xh = X @ H
        xw = X @ W if cfg.track_gradient else None
        _record(trace, clock, "full", H, W, xh, xw, X.fro_norm_sq, cfg.track_gradient,
                s_d=plan.s_d, s_r=plan.s_r, theta=plan.theta)
        if check_stop(trace, cfg.tol, cfg.patience):
            break
    if cfg.refine:
        H, trace = iterative_refinement(X, W, H, cfg, trace=trace, clock=clock)
    return H, trace


def iterative_refinement(X: SymmetricMatrix, W: np.ndarray | None, H: np.ndarray, cfg: SolverConfig,
                         trace: ConvergenceTrace | None = None, clock: _Clock | None = None):
    """Continue with the same update rule on the full matrix until the stopping test fires again."""
    trace = ConvergenceTrace() if trace is None else trace
    clock = _Clock() if clock is None else clock
    if cfg.rule == "pgncg":
        H = _pgncg_loop(X, H, cfg, trace, clock, "refine")
    else:
        alpha = cfg.alpha_value(X)
        _, H = _alternating_loop(X, H.copy() if W is None else W, H, alpha, cfg.rule, cfg, trace, clock,
                                 "refine")
    return H, trace


def factorize(X: SymmetricMatrix, cfg: SolverConfig):
    """Run the driver selected by ``cfg.method``; returns ``(H, trace)``."""
    family = cfg.family
    if family == "lai":
        return lai_symnmf(X, cfg)
    if family == "comp":
        return compressed_symnmf(X, cfg)
    if family == "lvs":
        return lvs_symnmf(X, cfg)
    if cfg.method == "pgncg":
        H, trace = symnmf_pgncg(X, cfg)
    else:
        H, trace = symnmf_anls(X, cfg)
    if cfg.refine:
        warnings.warn("refinement has no effect for full-data methods", RuntimeWarning, stacklevel=2)
    return H, trace
