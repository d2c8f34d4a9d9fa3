"""Seeded statistical experiments that check the sketching and range-finder error bounds."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .matrix import SymmetricMatrix, gather_rows, gram
from .randlin import apx_evd, cholesky_qr, rrf
from .sampling import build_hybrid_plan, leverage_scores, theoretical_sample_count
from .update import nls_bruteforce, nnls_bpp

SPECTRA = ("flat-tail", "geometric", "exact-rank")
# residuals below this multiple of ||X||_F are treated as zero
RRF_ROUNDOFF = 1e-10


@dataclass
class VerificationReport:
    theorem: str
    trials: int
    params: dict
    violations: int
    passed: bool
    margins: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def violation_rate(self) -> float:
        return self.violations / self.trials

    def to_dict(self) -> dict:
        out = asdict(self)
        out["violation_rate"] = self.violation_rate
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def binomial_slack(delta: float, trials: int) -> float:
    return 3.0 * math.sqrt(delta * (1.0 - delta) / trials)


def _rate_passes(violations: int, trials: int, delta: float) -> bool:
    return violations / trials <= delta + binomial_slack(delta, trials)


def _generator(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _check_prob(name: str, value: float):
    if not 0 < value < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def _check_trials(trials: int):
    if trials < 1:
        raise ValueError("trials must be at least 1")


def make_factor(m: int, k: int, rng: np.random.Generator, kind: str = "gaussian") -> np.ndarray:
    """Random tall test matrix.

    ``gaussian`` has nearly uniform leverage; ``skewed`` stacks a large
    multiple of the identity on top so the first k rows carry almost all of it.
    """
    A = rng.standard_normal((m, k))
    if kind == "skewed":
        A[:k] = 1e4 * np.eye(k)
    elif kind != "gaussian":
        raise ValueError(f"unknown factor kind '{kind}'")
    return A


def _nls_instance(m, k, rng, zero_residual=False, noise=1.0):
    A = rng.standard_normal((m, k))
    x0 = rng.standard_normal(k)
    if zero_residual:
        x0 = np.abs(x0)
        b = A @ x0
    else:
        # at least one negative coefficient so the constraint is active
        x0[0] = -abs(x0[0])
        b = A @ x0 + noise * rng.standard_normal(m)
    return A, b


def _nls(A, b):
    G = gram(A)
    return nnls_bpp(G, (A.T @ b)[:, None])[:, 0]


def verify_nls_bound(k: int, m: int, delta: float, eps_r: float, trials: int, rng,
                     s: int | None = None, zero_residual: bool = False) -> VerificationReport:
    """Sketched versus exact NLS solutions under leverage-score row sampling.

    Each trial draws a Gaussian ``A`` (m x k) and ``b = A x0 + noise`` with a
    negative entry in ``x0``, solves the full and sampled NLS problems, and
    counts a violation when ``||x_hat - x|| > sqrt(eps_r) ||r|| / sigma_min(A)``.
    ``s`` defaults to :func:`theoretical_sample_count`.
    """
    _check_prob("delta", delta)
    _check_prob("eps_r", eps_r)
    _check_trials(trials)
    if s is None:
        s = theoretical_sample_count(k, delta, eps_r)
    if s < 1 or m < s or m <= k:
        raise ValueError(f"infeasible sizes: need k < m and s <= m (k={k}, m={m}, s={s})")
    children = _generator(rng).spawn(trials)
    margins, violations, oracle_checks, oracle_max_diff = [], 0, 0, 0.0
    for child in children:
        A, b = _nls_instance(m, k, child, zero_residual)
        x = _nls(A, b)
        if k <= 8:
            ref = nls_bruteforce(A, b)
            oracle_max_diff = max(oracle_max_diff, float(np.max(np.abs(ref - x)) / max(1.0, np.abs(ref).max())))
            oracle_checks += 1
        r = A @ x - b
        sigma_min = math.sqrt(max(np.linalg.eigvalsh(gram(A))[0], 0.0))
        plan = build_hybrid_plan(leverage_scores(A), s, 1.0, child)
        SA = gather_rows(A, plan)
        Sb = plan.weights * b[plan.indices]
        x_hat = nnls_bpp(gram(SA), (SA.T @ Sb)[:, None])[:, 0]
        err = float(np.linalg.norm(x_hat - x))
        bound = math.sqrt(eps_r) * float(np.linalg.norm(r)) / sigma_min
        margins.append(bound - err)
        if err > bound + 1e-9 * max(1.0, float(np.linalg.norm(x))):
            violations += 1
    return VerificationReport(
        "nls-bound", trials,
        {"k": k, "m": m, "delta": delta, "eps_r": eps_r, "s": s, "tau": 1.0},
        violations, _rate_passes(violations, trials, delta), margins,
        {"oracle_checks": oracle_checks, "oracle_max_rel_diff": oracle_max_diff},
    )


def empirical_sample_threshold(k: int, m: int, delta: float, eps_r: float, trials: int, rng,
                               grid=None) -> int | None:
    """Smallest sample count on a grid whose empirical violation rate is at most ``delta``."""
    rng = _generator(rng)
    if grid is None:
        hi = min(m, theoretical_sample_count(k, delta, eps_r))
        grid = sorted({int(v) for v in np.geomspace(2 * k, hi, 12)})
    for s in grid:
        report = verify_nls_bound(k, m, delta, eps_r, trials, rng.spawn(1)[0], s=s)
        if report.violation_rate <= delta:
            return s
    return None


def _hybrid_split(scores, tau):
    det = scores.values / scores.rank >= tau
    theta = float(scores.values[det].sum())
    return int(det.sum()), theta, scores.rank - theta


def verify_sc1_hybrid(k: int, m: int, eps_s: float, delta: float, tau: float, trials: int, rng,
                      factor: str = "gaussian") -> VerificationReport:
    """Singular values of the hybrid-sketched orthonormal basis ``S U`` stay within ``1 +- eps_s``.

    The random sample count is the smallest integer above
    ``144 xi ln(2k/delta) / eps_s^2`` with ``xi`` measured per trial.
    """
    _check_prob("delta", delta)
    _check_prob("eps_s", eps_s)
    _check_trials(trials)
    if not 0 < tau <= 1 or m <= k:
        raise ValueError("need 0 < tau <= 1 and m > k")
    margins, violations = [], 0
    accounting_err, sizes = 0.0, []
    for child in _generator(rng).spawn(trials):
        A = make_factor(m, k, child, factor)
        U, _ = cholesky_qr(A)
        scores = leverage_scores(A)
        s_d, theta, xi = _hybrid_split(scores, tau)
        s_r = math.floor(144.0 * xi * math.log(2 * k / delta) / eps_s**2) + 1 if xi > 0 else 0
        s = s_d + s_r
        plan = build_hybrid_plan(scores, max(s, 1), tau, child)
        accounting_err = max(accounting_err, abs(plan.theta + plan.xi - k), abs(plan.theta - theta))
        if xi > 0 and plan.s_d + plan.s_r != s:
            accounting_err = math.inf
        sizes.append((plan.s_d, plan.s_r))
        sv = np.linalg.svd(gather_rows(U, plan), compute_uv=False)
        dev = float(np.max(np.abs(sv**2 - 1.0)))
        margins.append(eps_s - dev)
        if dev > eps_s:
            violations += 1
    return VerificationReport(
        "sc1-hybrid", trials,
        {"k": k, "m": m, "delta": delta, "eps_s": eps_s, "tau": tau, "factor": factor},
        violations, _rate_passes(violations, trials, delta), margins,
        {"accounting_max_err": accounting_err, "sample_sizes": sizes},
    )


def verify_sc2_hybrid(k: int, m: int, eps_r: float, delta: float, tau: float, trials: int, rng,
                      factor: str = "gaussian", zero_residual: bool = False) -> VerificationReport:
    """Sketched residual product ``U^T S^T S r`` stays within ``eps_r ||r||^2 / 2`` of ``U^T r``.

    ``r`` is the NLS residual of a random instance; the random sample count is
    ``ceil(2 xi / (delta eps_r))``.
    """
    _check_prob("delta", delta)
    _check_prob("eps_r", eps_r)
    _check_trials(trials)
    if not 0 < tau <= 1 or m <= k:
        raise ValueError("need 0 < tau <= 1 and m > k")
    margins, violations = [], 0
    accounting_err, sizes = 0.0, []
    for child in _generator(rng).spawn(trials):
        A = make_factor(m, k, child, factor)
        x0 = child.standard_normal(k)
        if zero_residual:
            b = A @ np.abs(x0)
        else:
            x0[0] = -abs(x0[0])
            b = A @ x0 + child.standard_normal(m)
        r = b - A @ _nls(A, b)
        if zero_residual:
            r = np.zeros(m)
        U, _ = cholesky_qr(A)
        scores = leverage_scores(A)
        s_d, theta, xi = _hybrid_split(scores, tau)
        s_r = math.ceil(2.0 * xi / (delta * eps_r)) if xi > 0 else 0
        s = s_d + s_r
        plan = build_hybrid_plan(scores, max(s, 1), tau, child)
        accounting_err = max(accounting_err, abs(plan.theta + plan.xi - k), abs(plan.theta - theta))
        if xi > 0 and plan.s_d + plan.s_r != s:
            accounting_err = math.inf
        sizes.append((plan.s_d, plan.s_r))
        SU = gather_rows(U, plan)
        Sr = plan.weights * r[plan.indices]
        lhs = float(np.sum((U.T @ r - SU.T @ Sr) ** 2))
        rhs = eps_r * float(r @ r) / 2.0
        margins.append(rhs - lhs)
        if lhs > rhs:
            violations += 1
    return VerificationReport(
        "sc2-hybrid", trials,
        {"k": k, "m": m, "delta": delta, "eps_r": eps_r, "tau": tau, "factor": factor},
        violations, _rate_passes(violations, trials, delta), margins,
        {"accounting_max_err": accounting_err, "sample_sizes": sizes},
    )


def verify_matmul_expectation(shapes: tuple[int, int, int], beta: float, s: int, trials: int, rng,
                              same: bool = False) -> VerificationReport:
    """Monte-Carlo check of ``E||A^T B - A^T S^T S B||_F^2 <= ||A||^2 ||B||^2 / (beta s)``.

    ``shapes = (m, ka, kb)``. Rows are drawn with probabilities
    ``beta ||A_i||^2 / ||A||^2 + (1 - beta) / m``. The report passes when the
    mean over trials is at most 1.1 times the bound; per-trial violations
    (a single estimate above the bound) are informational. ``same=True`` uses
    ``B = A``.
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    _check_trials(trials)
    m, ka, kb = shapes
    if min(m, ka, kb, s) < 1:
        raise ValueError("shapes and s must be positive")
    rng = _generator(rng)
    A = rng.standard_normal((m, ka))
    B = A.copy() if same else rng.standard_normal((m, kb))
    row_sq = np.einsum("ij,ij->i", A, A)
    p = beta * row_sq / row_sq.sum() + (1.0 - beta) / m
    p /= p.sum()
    exact = A.T @ B
    bound = float(row_sq.sum() * np.sum(B * B) / (beta * s))
    expected = float((np.sum(row_sq * np.einsum("ij,ij->i", B, B) / p) - np.sum(exact**2)) / s)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    errors = np.empty(trials)
    batch = max(1, 2_000_000 // max(m * ka * kb, 1))
    for start in range(0, trials, batch):
        stop = min(trials, start + batch)
        draws = np.minimum(np.searchsorted(cdf, rng.random((stop - start, s)), side="right"), m - 1)
        counts = np.zeros((stop - start, m))
        np.add.at(counts, (np.repeat(np.arange(stop - start), s), draws.ravel()), 1.0)
        scale = counts / (s * p)
        approx = np.einsum("ti,ia,ib->tab", scale, A, B)
        errors[start:stop] = np.sum((approx - exact) ** 2, axis=(1, 2))
    mean = float(errors.mean())
    violations = int(np.sum(errors > bound))
    return VerificationReport(
        "matmul-expectation", trials,
        {"m": m, "ka": ka, "kb": kb, "beta": beta, "s": s},
        violations, mean <= 1.1 * bound, list(bound - errors),
        {"mean_error": mean, "bound": bound, "exact_expectation": expected},
    )


def spectrum_profile(name: str, n: int, r: int) -> np.ndarray:
    j = np.arange(n)
    if name == "flat-tail":
        return np.where(j < r, 1.0, 0.1)
    if name == "geometric":
        return 0.8**j
    if name == "exact-rank":
        return np.where(j < r, 1.0 + (r - j) / r, 0.0)
    raise ValueError(f"unknown spectrum '{name}', expected one of {SPECTRA}")


def rrf_error_bound(sigma: np.ndarray, r: int, rho: int, q: int, delta: float) -> float:
    """High-probability bound on ``||QB - X||_F`` for a range finder of width ``r + rho``."""
    sigma = np.sort(np.asarray(sigma, dtype=np.float64))[::-1]
    n = sigma.size
    l = r + rho
    c_delta = (math.e * math.sqrt(l) / (rho + 1) * (2.0 / delta) ** (1.0 / (rho + 1))
               * (math.sqrt(n - l + rho) + math.sqrt(l) + math.sqrt(2.0 * math.log(2.0 / delta))))
    tail = float(np.sum(sigma[r:] ** 2))
    nxt = sigma[r] if r < n else 0.0
    ratio = nxt / sigma[r - 1] if sigma[r - 1] > 0 else 0.0
    return math.sqrt(tail + r * c_delta**2 * nxt**2 * ratio ** (4 * q))


def verify_rrf_bound(spectrum, r: int, rho: int, q: int, delta: float, trials: int, rng,
                     m: int = 200) -> VerificationReport:
    """Range-finder residual versus its high-probability bound on a matrix with a known spectrum.

    ``spectrum`` is a profile name from ``SPECTRA`` or an explicit vector of
    singular values. The test matrix is ``V diag(sigma) V^T`` with a random
    orthogonal ``V``. Every trial also checks that the approximate EVD built
    on the same basis has residual at most twice the QB residual.
    """
    _check_prob("delta", delta)
    _check_trials(trials)
    rng = _generator(rng)
    if isinstance(spectrum, str):
        name = spectrum
        sigma = spectrum_profile(spectrum, m, r)
    else:
        sigma = np.asarray(spectrum, dtype=np.float64)
        name = "custom"
        m = sigma.size
    if r < 1 or rho < 0 or r + rho > m or q < 0:
        raise ValueError("need r >= 1, rho >= 0, q >= 0 and r + rho <= m")
    V, _ = np.linalg.qr(rng.standard_normal((m, m)))
    dense = (V * sigma) @ V.T
    X = SymmetricMatrix((dense + dense.T) / 2)
    bound = rrf_error_bound(sigma, r, rho, q, delta)
    # an exact-rank spectrum has bound 0 while computed residuals are roundoff
    slack = RRF_ROUNDOFF * math.sqrt(X.fro_norm_sq)
    margins, violations, two_mu_failures, two_mu_slack = [], 0, 0, math.inf
    for child in rng.spawn(trials):
        basis = rrf(X, r, rho, q, child)
        Q = basis.q_matrix
        qb_res = float(np.linalg.norm(Q @ (Q.T @ X.data) - X.data))
        margins.append(bound - qb_res)
        if qb_res > bound + slack:
            violations += 1
        evd = apx_evd(X, r, rho, q, child, basis=basis)
        evd_res = float(np.linalg.norm(evd.operator().toarray() - X.data))
        two_mu_slack = min(two_mu_slack, 2 * qb_res + slack - evd_res)
        if evd_res > 2 * qb_res + slack:
            two_mu_failures += 1
    return VerificationReport(
        "rrf-bound", trials,
        {"spectrum": name, "m": m, "r": r, "rho": rho, "q": q, "delta": delta},
        violations, _rate_passes(violations, trials, delta) and two_mu_failures == 0, margins,
        {"bound": bound, "two_mu_failures": two_mu_failures, "two_mu_min_slack": two_mu_slack},
    )
