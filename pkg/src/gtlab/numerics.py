"""Special functions, binomial tails and bracketed root finding.

Everything here is pure and works on plain floats. Probabilities that can
underflow are handled in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

INV_E = math.exp(-1.0)


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class ConvergenceError(RuntimeError):
    """An iterative method failed to reach its tolerance."""


@dataclass(frozen=True)
class RealBracket:
    lo: float
    hi: float
    tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty bracket [{self.lo}, {self.hi}]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function for real x >= -1/e.

    scipy supplies the starting value; two Halley steps then pin the
    residual down to rounding level, which matters right next to the
    branch point where scipy alone can be a few ulps off.
    """
    x = float(x)
    if x < -INV_E - 1e-15:
        raise DomainError(f"lambert_w0 undefined for x={x} < -1/e")
    if x <= -INV_E:
        return -1.0
    if x == 0.0:
        return 0.0
    w = float(special.lambertw(x, 0).real)
    for _ in range(2):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0.0 or w == -1.0:
            break
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = max(w - step, -1.0)
        if abs(w_new * math.exp(w_new) - x) >= abs(f):
            break
        w = w_new
    return w


# Taylor coefficients of W0 around the branch point in p = sqrt(2(1 + e x))
_BRANCH_SERIES = (-1.0, 1.0, -1.0 / 3.0, 11.0 / 72.0, -43.0 / 540.0, 769.0 / 17280.0, -221.0 / 8505.0)


def lambert_w0_branch(s: float) -> float:
    """W0 at x = -(1 - s)/e, taking the offset s from the branch point directly.

    For tiny s the argument x cannot carry s accurately in floating point,
    so callers that know s in closed form should use this entry point.
    """
    if s < 0.0:
        raise DomainError(f"branch offset must be >= 0, got {s}")
    if s < 1e-4:
        p = math.sqrt(2.0 * s)
        return sum(c * p**i for i, c in enumerate(_BRANCH_SERIES))
    return lambert_w0(-(1.0 - s) * INV_E)


def _xlogy_ratio(a: float, p: float) -> float:
    # a*log(a/p) with the 0*log(0) = 0 convention
    return 0.0 if a == 0.0 else a * math.log(a / p)


def kl_bernoulli(a: float, p: float) -> float:
    """KL divergence D(a || p) between Bernoulli(a) and Bernoulli(p), in nats."""
    if not (0.0 < a < 1.0 and 0.0 < p < 1.0):
        raise DomainError(f"kl_bernoulli needs a, p in (0,1); got a={a}, p={p}")
    return max(0.0, _xlogy_ratio(a, p) + _xlogy_ratio(1.0 - a, 1.0 - p))


def _kl_closed(a: float, p: float) -> float:
    # same as kl_bernoulli but allows a in {0, 1}, used inside the tail bounds
    return max(0.0, _xlogy_ratio(a, p) + _xlogy_ratio(1.0 - a, 1.0 - p))


def log_binom_tail(n: int, p: float, k: int, side: str) -> float:
    """log Pr[Binom(n,p) >= k] (side='upper') or log Pr[Binom(n,p) <= k] (side='lower')."""
    n, k = int(n), int(k)
    if side == "upper":
        if k <= 0:
            return 0.0
        if k > n:
            return -math.inf
        js = np.arange(k, n + 1)
    elif side == "lower":
        if k >= n:
            return 0.0
        if k < 0:
            return -math.inf
        js = np.arange(0, k + 1)
    else:
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    if p <= 0.0 or p >= 1.0:
        # degenerate distribution: all mass at 0 or at n
        at = 0 if p <= 0.0 else n
        return 0.0 if (js[0] <= at <= js[-1]) else -math.inf
    logpmf = special.gammaln(n + 1) - special.gammaln(js + 1) - special.gammaln(n - js + 1)
    logpmf = logpmf + js * math.log(p) + (n - js) * math.log1p(-p)
    return min(0.0, float(special.logsumexp(logpmf)))


def binom_tail(n: int, p: float, k: int, side: str = "upper", mode: str = "exact") -> float:
    """Binomial tail probability or one of its KL-exponent bounds.

    mode='exact' sums pmf terms in log space. 'chernoff_upper' is
    exp(-n D(k/n || p)) and 'chernoff_lower' is that exponential divided
    by sqrt(8k(1-k/n)). Both bounds require k/n on the tail side of p.
    """
    n, k = int(n), int(k)
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if mode == "exact":
        return math.exp(log_binom_tail(n, p, k, side))
    if side not in ("lower", "upper"):
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    a = k / n
    if mode == "chernoff_upper":
        if (side == "upper" and a < p) or (side == "lower" and a > p):
            raise ValueError(f"chernoff bound needs k/n={a} on the {side} side of p={p}")
        return math.exp(-n * _kl_closed(a, p))
    if mode == "chernoff_lower":
        ok = (0 < k < p * n) if side == "lower" else (p * n < k < n)
        if not ok:
            raise ValueError(f"lower bound needs k strictly inside the {side} tail (k={k}, pn={p * n})")
        return math.exp(-n * _kl_closed(a, p)) / math.sqrt(8.0 * k * (1.0 - a))
    raise ValueError(f"unknown mode {mode!r}")


def solve_root(f: Callable[[float], float], bracket: RealBracket) -> float:
    """Find a sign change of f inside the bracket.

    Brent's method (bisection safeguarded secant / inverse quadratic steps).
    Stops when |f(x)| <= tol or the bracket narrows below tol.
    """
    flo, fhi = f(bracket.lo), f(bracket.hi)
    if flo == 0.0:
        return bracket.lo
    if fhi == 0.0:
        return bracket.hi
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise DomainError(f"no sign change on [{bracket.lo}, {bracket.hi}]: f={flo}, {fhi}")
    try:
        x, info = optimize.brentq(
            f, bracket.lo, bracket.hi, xtol=bracket.tol, rtol=4 * np.finfo(float).eps,
            maxiter=bracket.max_iter, full_output=True, disp=False,
        )
    except RuntimeError as exc:  # pragma: no cover - brentq only raises on bad input
        raise ConvergenceError(str(exc)) from exc
    if not info.converged and abs(f(x)) > bracket.tol:
        raise ConvergenceError(f"root finder stopped after {info.iterations} iterations at x={x}")
    return float(x)


def log_binomial(n: int, k: int) -> float:
    """log C(n, k) via log-gamma."""
    if k < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")
    if k == 0 or k == n:
        return 0.0
    n, k = float(n), float(k)
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def log_multinomial(n: int, parts: Sequence[int]) -> float:
    """log of n! / (prod(parts)! * (n - sum(parts))!)."""
    parts = [int(x) for x in parts]
    rest = n - sum(parts)
    if rest < 0 or any(x < 0 for x in parts):
        raise ValueError(f"parts {parts} do not fit in n={n}")
    out = special.gammaln(n + 1) - special.gammaln(rest + 1)
    for x in parts:
        out -= special.gammaln(x + 1)
    return float(out)
