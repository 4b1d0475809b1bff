"""First and second moment calculations for the solution count, and chi-squared ledgers."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .designs import BERN, DesignParams, gen_planted_test
from .detection import choose_t, degree_threshold
from .numerics import (ConvergenceError, DomainError, RealBracket, log_binom_tail, log_binomial,
                       solve_root)
from .parallel import trial_rng
from .thresholds import LN2, normalize_design

TWO_LN2 = 2.0 * LN2


# --- first moment ---------------------------------------------------------

@dataclass(frozen=True)
class FirstMomentSolution:
    q_hat: float
    residual: float
    exponent_per_kDelta: float
    log_first_moment: float
    Gamma: int


def _one_minus_pow(q: float, g: float) -> float:
    # 1 - (1-q)^g without cancellation
    return -math.expm1(g * math.log1p(-q))


def solve_first_moment(N: int, M: int, k: int, delta: int, Gamma: int | None = None) -> FirstMomentSolution:
    """Solve q / (1 - (1-q)^Gamma) = Delta k / (Gamma M) and evaluate log E[Z].

    ``Gamma`` defaults to round(N Delta / M). The log first moment is the
    balls-into-bins count with the tilted test-occupancy law.
    """
    Gamma = round(N * delta / M) if Gamma is None else int(Gamma)
    target = delta * k / (Gamma * M)
    if not 1.0 / Gamma < target < 1.0:
        raise DomainError(f"no root in (0,1): need 1/Gamma < Delta k/(Gamma M) < 1, got {target}")

    def f(q):
        return q / _one_minus_pow(q, Gamma) - target

    lo = 1e-300
    while f(lo) >= 0:  # pragma: no cover - only if 1/Gamma is numerically close to target
        lo *= 1e3
    q = solve_root(f, RealBracket(lo, 1.0 - 1e-15, tol=1e-18, max_iter=500))
    resid = abs(f(q))
    E = Gamma * M
    log_ez = (log_binomial(N, k) + M * math.log(_one_minus_pow(q, Gamma))
              - (log_binomial(E, delta * k) + delta * k * math.log(q) + (E - delta * k) * math.log1p(-q)))
    return FirstMomentSolution(q, resid, log_ez / (k * delta), log_ez, Gamma)


# --- overlap system -------------------------------------------------------

def W_overlap(x0: float, x1: float) -> float:
    """Joint coverage factor 1 - 2 e^{-2 ln2 (x0+x1)} + e^{-2 ln2 (2 x0 + x1)}."""
    return 1.0 - 2.0 * math.exp(-TWO_LN2 * (x0 + x1)) + math.exp(-TWO_LN2 * (2.0 * x0 + x1))


def overlap_residuals(alpha: float, x0: float, x1: float) -> tuple[float, float]:
    w = W_overlap(x0, x1)
    r1 = x1 / w - alpha
    r2 = x0 * (-math.expm1(-TWO_LN2 * (x0 + x1))) / w - (1.0 - alpha)
    return r1, r2


def _F_gradient(alpha, x0, x1):
    w = W_overlap(x0, x1)
    e1 = math.exp(-TWO_LN2 * (x0 + x1))
    g0 = -2.0 * (1.0 - alpha) / x0 + 2.0 * (1.0 - e1) / w
    g1 = -alpha / x1 + 1.0 / w
    return np.array([g0, g1])


def _F_hessian(alpha, x0, x1):
    w = W_overlap(x0, x1)
    e1 = math.exp(-TWO_LN2 * (x0 + x1))
    e2 = math.exp(-TWO_LN2 * (2.0 * x0 + x1))
    # partial derivatives of W
    w0 = TWO_LN2 * (2.0 * e1 - 2.0 * e2)
    w1 = TWO_LN2 * (2.0 * e1 - e2)
    h00 = 2.0 * (1.0 - alpha) / x0**2 + 2.0 * (TWO_LN2 * e1 * w - (1.0 - e1) * w0) / w**2
    h01 = 2.0 * (TWO_LN2 * e1 * w - (1.0 - e1) * w1) / w**2
    h11 = alpha / x1**2 - w1 / w**2
    return np.array([[h00, h01], [h01, h11]])


@dataclass(frozen=True)
class OverlapMomentSolution:
    alpha: float
    q00: float
    q01: float
    q10: float
    q11: float
    x0: float
    x1: float
    residuals: tuple[float, float]
    F_value: float | None = None
    converged: bool = True
    method: str = "newton"


def _nested_bisection(alpha: float, tol: float = 1e-14) -> tuple[float, float]:
    """Solve the overlap system by bisection in x0 of the x1 that solves the first equation."""

    def x1_of(x0):
        g = lambda x1: x1 - alpha * W_overlap(x0, x1)
        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
        return solve_root(g, RealBracket(1e-300, hi, tol=tol))

    def h(x0):
        return overlap_residuals(alpha, x0, x1_of(x0))[1]

    hi = 1.0
    while h(hi) < 0:
        hi *= 2.0
    x0 = solve_root(h, RealBracket(1e-12, hi, tol=tol))
    return x0, x1_of(x0)


def solve_xs(alpha: float, tol: float = 1e-13, max_iter: int = 100) -> tuple[float, float, str, bool]:
    """Rescaled overlap variables (x0, x1) for a given alpha in (0, 1].

    Damped Newton on the stationarity conditions of F (which are exactly the
    overlap equations), started from the piecewise approximation.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0,1], got {alpha}")
    if alpha == 1.0:
        # x0 = 0 and x1 = 1 - 4^{-x1}, whose positive root is 1/2
        return 0.0, 0.5, "closed_form", True
    x = np.array(piecewise_x(alpha, corrected=True), dtype=float)
    x = np.maximum(x, 1e-3)
    for _ in range(max_iter):
        r = np.array(overlap_residuals(alpha, *x))
        if np.max(np.abs(r)) <= tol:
            return float(x[0]), float(x[1]), "newton", True
        H = _F_hessian(alpha, *x)
        if np.linalg.cond(H) > 1e12:
            break
        step = np.linalg.solve(H, _F_gradient(alpha, *x))
        lam = 1.0
        base = np.max(np.abs(r))
        while lam > 1e-8:
            cand = x - lam * step
            if np.all(cand > 0) and W_overlap(*cand) > 0:
                if np.max(np.abs(overlap_residuals(alpha, *cand))) < base or lam < 1e-4:
                    break
            lam *= 0.5
        x = cand
    x0, x1 = _nested_bisection(alpha)
    ok = max(abs(v) for v in overlap_residuals(alpha, x0, x1)) <= 1e-10
    return x0, x1, "bisection", ok


def solve_overlap_system(alpha: float, N: int, M: int, k: int, delta: int, Gamma: int | None = None,
                         c: float | None = None) -> OverlapMomentSolution:
    """Overlap distribution (q00, q01, q10, q11) at overlap fraction alpha.

    Uses the large-N form of the moment equations, where Gamma is replaced by
    2 ln2 N / k and only the rescaled pair (x0, x1) remains. N and k set the
    rescaling q01 = x0 k/N, q11 = x1 k/N. If c is given, F is evaluated too.
    """
    x0, x1, method, ok = solve_xs(alpha)
    if not ok:
        raise ConvergenceError(f"overlap system did not converge at alpha={alpha}")
    s = k / N
    q01, q11 = x0 * s, x1 * s
    q00 = 1.0 - 2.0 * q01 - q11
    res = overlap_residuals(alpha, x0, x1) if x0 > 0 else (x1 / W_overlap(0.0, x1) - alpha, 0.0)
    Fv = F_alpha(alpha, c, x0, x1) if c is not None else None
    return OverlapMomentSolution(alpha, q00, q01, q01, q11, x0, x1, (abs(res[0]), abs(res[1])), Fv, ok, method)


I1_END, I3_START = 0.25, 0.85


def piecewise_x(alpha: float, corrected: bool = False) -> tuple[float, float]:
    """Piecewise linear stand-in for the optimal (x0, x1).

    The third-interval x1 is taken literally by default, (11 - 16 alpha)/10,
    which is negative there. ``corrected=True`` flips its sign, matching the
    closed form of F used on that interval and the value 1/2 at alpha = 1.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0,1), got {alpha}")
    if alpha <= I1_END:
        return -0.6 * alpha + 0.5, alpha / 5.0
    if alpha < I3_START:
        return 0.5 - 0.3 * alpha / LN2, alpha / (5.0 * LN2)
    x1 = (16.0 * alpha - 11.0) / 10.0
    return 1.0 - alpha, x1 if corrected else -x1


def F_alpha(alpha: float, c: float, x0: float, x1: float) -> float:
    """Normalised log second moment at overlap alpha for a trial (x0, x1).

    Any positive (x0, x1) gives an upper bound; the solution of the overlap
    system is the minimiser. At alpha = 1 the x0 terms vanish.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0,1], got {alpha}")
    if x1 <= 0 or x0 < 0 or (x0 == 0 and alpha < 1.0):
        raise DomainError(f"need positive x0, x1; got ({x0}, {x1})")
    w = W_overlap(x0, x1)
    if w <= 0:
        raise DomainError(f"coverage factor W={w} is not positive")
    cl = c * LN2
    out = alpha * math.log(alpha / x1)
    if alpha < 1.0:
        out += 2.0 * (1.0 - alpha) * math.log((1.0 - alpha) / x0)
    out += (2.0 - alpha) * (1.0 - c * LN2**2) / cl
    out += math.log(w) / TWO_LN2 + (2.0 * x0 + x1) - (2.0 - alpha)
    return out


def second_moment_bound(c: float) -> float:
    """Twice the first-moment exponent, the level F must stay below."""
    return 2.0 * (1.0 - c * LN2) / (c * LN2)


@dataclass(frozen=True)
class MarginRow:
    alpha: float
    x0: float
    x1: float
    F: float
    bound: float
    margin: float
    source: str


def alpha_grid(step: float = 0.01) -> list[float]:
    n = round(1.0 / step)
    return [round(i * step, 12) for i in range(1, n)]


def F_for_certificate(alpha: float, c: float) -> tuple[float, float, float, str]:
    """F on the piecewise (x0, x1) except on the top interval, where the solved point is used."""
    if alpha >= I3_START:
        x0, x1, _, _ = solve_xs(alpha)
        src = "solved"
    else:
        x0, x1 = piecewise_x(alpha)
        src = "piecewise"
    return x0, x1, F_alpha(alpha, c, x0, x1), src


def second_moment_table(c: float, alphas: Sequence[float]) -> list[MarginRow]:
    if len(alphas) == 0:
        raise ValueError("alpha grid is empty")
    bound = second_moment_bound(c)
    rows = []
    for a in alphas:
        x0, x1, F, src = F_for_certificate(a, c)
        rows.append(MarginRow(a, x0, x1, F, bound, bound - F, src))
    return rows


def second_moment_margin(c: float, theta: float | None = None, alpha_grid: Sequence[float] | None = None) -> float:
    """Smallest gap between the bound and F over the grid; positive certifies the inequality.

    The leading-order exponent does not depend on theta; it is accepted for
    interface symmetry.
    """
    if alpha_grid is None:
        alpha_grid = globals()["alpha_grid"]()
    return min(r.margin for r in second_moment_table(c, alpha_grid))


# --- Bernoulli chi-squared ----------------------------------------------------

def overlap_prob(ell: int, k: int, N: int) -> float:
    """log Pr[|u cap u'| = ell] for independent uniform k-subsets of N."""
    if not 0 <= ell <= k <= N:
        raise ValueError(f"need 0 <= ell <= k <= N, got ell={ell}, k={k}, N={N}")
    if k - ell > N - k:
        return -math.inf
    return log_binomial(k, ell) + log_binomial(N - k, k - ell) - log_binomial(N, k)


@dataclass(frozen=True, eq=False)
class ChiSqLedger:
    theta: float
    c: float
    t: float
    epsilon: float
    n: int
    N: int
    M: int
    k: int
    d: float
    log_terms: np.ndarray
    ell_cut: int
    log_T_low: float
    log_T_high: float
    p_good_union: float
    p_good_mc: float | None
    p_good_used: str

    @property
    def T_low(self) -> float:
        return math.exp(self.log_T_low)

    @property
    def T_high(self) -> float:
        return math.exp(self.log_T_high)

    @property
    def total(self) -> float:
        return math.exp(np.logaddexp(self.log_T_low, self.log_T_high))


def _p_good_mc(params: DesignParams, N: int, M: int, d: float, trials: int, seed: int) -> float:
    hits = 0
    for i in range(trials):
        g, inf = gen_planted_test(BERN, N, M, params.k, params.q, trial_rng(seed, i, 7), method="exact")
        hits += bool(np.all(g.degrees[inf] <= d))
    return hits / trials


def bern_chi_sq(theta: float, c: float, t: float = math.inf, epsilon: float = 1.0, n: int = 10**5,
                mc_trials: int = 0, seed: int = 0) -> ChiSqLedger:
    """Per-overlap log terms of the chi-squared sum for the degree-conditioned planted law.

    Term ell is log Pr(ell) + M (ell/k) ln 2 + log Pr[Binom(M, r) <= ell d]
    - 2 log P(A), with the binomial factor dropped when t is infinite. P(A)
    is bounded below by 1 - k Pr[Binom(M, 2q) >= d]; a Monte Carlo estimate
    is added when ``mc_trials`` > 0 and used if the union bound is vacuous.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0,1]")
    if not (math.isinf(t) or t > 1):
        raise ValueError("t must exceed 1 or be infinite")
    params = DesignParams.from_scaling(n, theta, c, BERN)
    N, M = params.center_dimensions()
    k, q = params.k, params.q
    d = degree_threshold(q, M, t)
    if math.isinf(t):
        p_union, p_mc, used = 1.0, None, "none"
    else:
        p_union = 1.0 - k * math.exp(log_binom_tail(M, 2.0 * q, math.ceil(d), "upper"))
        p_mc = _p_good_mc(params, N, M, d, mc_trials, seed) if mc_trials > 0 else None
        used = "union" if p_union > 0 else "mc"
    p_used = p_union if used in ("union", "none") else p_mc
    if not p_used or p_used <= 0:
        raise DomainError("no positive estimate of P(A) available; raise mc_trials")
    corr = -2.0 * math.log(p_used)
    terms = np.empty(k + 1)
    for ell in range(k + 1):
        val = overlap_prob(ell, k, N) + M * (ell / k) * LN2 + corr
        if not math.isinf(t):
            r = 4.0 * 2.0 ** (-ell / k) * (1.0 - 2.0 ** (-ell / k))
            val += log_binom_tail(M, min(r, 1.0), math.floor(ell * d), "lower")
        terms[ell] = val
    cut = int(math.floor(epsilon * k + 1e-12))
    lo = float(logsumexp(terms[:cut + 1]))
    hi = float(logsumexp(terms[cut + 1:])) if cut < k else -math.inf
    return ChiSqLedger(theta, c, t, epsilon, n, N, M, k, d, terms, cut, lo, hi, p_union, p_mc, used)


# --- exact oracle -----------------------------------------------------------

MAX_ORACLE_CELLS = 20
MAX_CC_CONFIGS = 10**7


def exact_chi_sq_oracle(design: str, N: int, M: int, k: int, q_or_delta: float,
                        allow_constant_column: bool = False) -> float:
    """chi^2(P || Q) by enumerating the whole sample space.

    P draws a uniform k-subset u and then a null graph conditioned on u
    covering every test. The likelihood ratio is the average over u of
    1{u covers X} / Q(u covers).
    """
    design = normalize_design(design)
    subsets = [sum(1 << i for i in s) for s in itertools.combinations(range(N), k)]
    if design == BERN:
        if N * M > MAX_ORACLE_CELLS:
            raise ValueError(f"N*M={N * M} exceeds {MAX_ORACLE_CELLS}")
        q = float(q_or_delta)
        # graph g has test j's column equal to digit j of g in base 2^N
        cols = np.arange(1 << N, dtype=np.int64)
        sizes = np.array([bin(x).count("1") for x in cols])
        col_prob = q**sizes * (1.0 - q) ** (N - sizes)
        graph_prob = np.ones(1)
        for _ in range(M):
            graph_prob = np.multiply.outer(graph_prob, col_prob).ravel()
        lik = np.zeros(graph_prob.shape)
        for u in subsets:
            col_cov = ((cols & u) != 0).astype(float)
            cov = np.ones(1)
            for _ in range(M):
                cov = np.multiply.outer(cov, col_cov).ravel()
            p_cover = float(cov @ graph_prob)
            if p_cover == 0.0:
                raise DomainError("planted law undefined: covering has probability 0")
            lik += cov / p_cover
        lik /= len(subsets)
        return max(0.0, float(graph_prob @ lik**2) - 1.0)

    if not allow_constant_column:
        raise ValueError("constant-column enumeration is disabled; pass allow_constant_column=True")
    delta = int(q_or_delta)
    rows = [sum(1 << j for j in s) for s in itertools.combinations(range(M), delta)]
    if len(rows) ** N > MAX_CC_CONFIGS:
        raise ValueError(f"{len(rows)}^{N} configurations exceed {MAX_CC_CONFIGS}")
    full = (1 << M) - 1
    n_u = len(subsets)
    hits = np.zeros(n_u)
    L = []
    for config in itertools.product(rows, repeat=N):
        cov = np.array([_union(config, u) == full for u in subsets], dtype=float)
        hits += cov
        L.append(cov)
    total = len(rows) ** N
    pq = hits / total
    if np.any(pq == 0):
        raise DomainError("some subset can never cover all tests")
    Ls = np.array(L) / pq[None, :]
    lik = Ls.mean(axis=1)
    return max(0.0, float(np.mean(lik**2)) - 1.0)


def _union(config, u: int) -> int:
    out, i = 0, 0
    while u:
        if u & 1:
            out |= config[i]
        u >>= 1
        i += 1
    return out


def analytic_chi_sq(N: int, M: int, k: int, q: float) -> float:
    """Closed-form Bernoulli chi^2 from the overlap law and per-test joint coverage."""
    base = 1.0 - (1.0 - q) ** k
    total = 0.0
    for ell in range(k + 1):
        lp = overlap_prob(ell, k, N)
        if lp == -math.inf:
            continue
        joint = 1.0 - 2.0 * (1.0 - q) ** k + (1.0 - q) ** (2 * k - ell)
        total += math.exp(lp) * (joint / base**2) ** M
    return total - 1.0
