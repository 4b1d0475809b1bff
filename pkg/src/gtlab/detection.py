"""Detection statistics for the testing problem, calibration and decision rules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .designs import (BERN, CC, BipartiteGraph, DesignParams, gen_null_test, gen_planted_test,
                      sample_reduced_planted)
from .numerics import kl_bernoulli
from .parallel import map_trials, master_seed, trial_rng
from .thresholds import LN2, normalize_design

SEPARATION_SENTINEL = 1e12
DEFAULT_EPS_T = 0.05
DEFAULT_B = 8.0


class DegenerateCalibration(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionOutcome:
    statistic_value: float
    decision: str
    threshold_used: float
    planted_side: str = "above"


@dataclass(frozen=True)
class CalibrationReport:
    mean_null: float
    var_null: float
    mean_planted: float
    var_planted: float
    separation_ratio: float
    threshold: float
    planted_side: str


# --- constant-column statistic ----------------------------------------------

def cc_degree_variance(graph: BipartiteGraph, delta: int) -> float:
    """Sum over tests of (Gamma_j - N Delta / M)^2.

    Evaluated as sum Gamma_j^2 - (N Delta)^2 / M in exact rational
    arithmetic, which equals the centred sum because sum Gamma_j = N Delta.
    """
    N, M = graph.N, graph.M
    if M == 0:
        return 0.0
    g = graph.test_degrees.astype(object)
    s2 = int(np.dot(g, g))
    return float(Fraction(s2 * M - (N * delta) ** 2, M))


def cc_null_mean(N: int, M: int, delta: int) -> float:
    """Exact null expectation of the degree-variance statistic, N Delta (1 - Delta/M)."""
    return N * delta * (1.0 - delta / M)


def cc_degree_variance_centered(graph: BipartiteGraph, delta: int) -> float:
    """Degree-variance statistic minus its null mean at the graph's own dimensions.

    After COMP the number of surviving individuals varies from graph to graph,
    and the raw statistic scales with it; centring removes that nuisance.
    """
    return cc_degree_variance(graph, delta) - cc_null_mean(graph.N, graph.M, delta)


# --- Bernoulli statistics -------------------------------------------------

def choose_t(theta: float, c: float, eps: float = DEFAULT_EPS_T) -> float:
    """Degree-threshold multiplier t for the given budget constant."""
    if c <= 1.0 / (2.0 * LN2**2):
        return 2.0
    if c < 1.0 / LN2**2:
        return 1.0 / (c * LN2**2)
    return 1.0 + eps


def degree_threshold(q: float, M: int, t: float) -> float:
    if math.isinf(t):
        return math.inf
    return float(math.ceil(2.0 * t * q * M))


def bern_high_degree_count(graph: BipartiteGraph, q: float, t: float) -> int:
    """Number of individuals with degree at least ceil(2 t q M)."""
    d = degree_threshold(q, graph.M, t)
    return int(np.count_nonzero(graph.degrees >= d))


def _lagrange_exact_int(x: int, a: int, b: int) -> int:
    # sum over j in [a, b) of the Lagrange basis on nodes 0..b-1 at integer x >= b:
    # L_j(x) = (-1)^(b-1-j) C(x, j) C(x-j-1, b-1-j)
    total = 0
    for j in range(a, b):
        term = math.comb(x, j) * math.comb(x - j - 1, b - 1 - j)
        total += term if (b - 1 - j) % 2 == 0 else -term
    return total


def poly_indicator(x: float, d: float, b: int) -> float:
    """Degree b-1 polynomial agreeing with 1{x >= d} on the integers 0..b-1.

    Off the nodes each Lagrange term is accumulated as a log-magnitude and a
    sign. At integer x beyond the nodes the sum is formed exactly in integer
    arithmetic instead, since the terms cancel heavily there.
    """
    a = math.ceil(d)
    if b % 2 == 0 or b <= a:
        raise ValueError(f"need odd b > ceil(d); got b={b}, ceil(d)={a}")
    a = max(a, 0)
    xf = float(x)
    if xf.is_integer():
        xi = int(xf)
        if 0 <= xi < b:
            return 1.0 if xi >= a else 0.0
        if xi >= b:
            val = _lagrange_exact_int(xi, a, b)
            try:
                return float(val)
            except OverflowError:
                return math.inf if val > 0 else -math.inf
    nodes = np.arange(b, dtype=float)
    diffs = xf - nodes
    log_abs = np.log(np.abs(diffs))
    neg = diffs < 0
    total_log, total_neg = log_abs.sum(), int(neg.sum())
    lg = [math.lgamma(j + 1) + math.lgamma(b - j) for j in range(b)]
    pos_logs, neg_logs = [], []
    for j in range(a, b):
        lmag = total_log - log_abs[j] - lg[j]
        sign_neg = (total_neg - int(neg[j]) + (b - 1 - j)) % 2 == 1
        (neg_logs if sign_neg else pos_logs).append(lmag)
    lp = np.logaddexp.reduce(pos_logs) if pos_logs else -math.inf
    ln = np.logaddexp.reduce(neg_logs) if neg_logs else -math.inf
    return math.exp(lp) - math.exp(ln)


def poly_degree_b(n: int, B_const: float = DEFAULT_B) -> int:
    """First odd integer strictly greater than B ln n."""
    b = math.floor(B_const * math.log(n)) + 1
    return b if b % 2 == 1 else b + 1


def bern_poly_statistic(graph: BipartiteGraph, q: float, t: float, B_const: float = DEFAULT_B,
                        n: int | None = None) -> float:
    """Sum over individuals of the polynomial indicator of their degree.

    ``n`` is the pre-COMP population size that sets the polynomial degree;
    it defaults to the number of individuals in the graph.
    """
    b = poly_degree_b(graph.N if n is None else n, B_const)
    d = degree_threshold(q, graph.M, t)
    if math.ceil(d) >= b:
        raise ParameterError(f"threshold d={d} is not below b={b}; raise B_const")
    vals, counts = np.unique(graph.degrees, return_counts=True)
    return float(sum(cnt * poly_indicator(int(v), d, b) for v, cnt in zip(vals, counts)))


# --- calibration and decisions ----------------------------------------------

def calibrate(samples_null: Sequence[float], samples_planted: Sequence[float]) -> CalibrationReport:
    """Midpoint threshold between the two sample means."""
    a = np.asarray(samples_null, dtype=float)
    b = np.asarray(samples_planted, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least two samples per side")
    mu0, mu1 = float(a.mean()), float(b.mean())
    if mu0 == mu1:
        raise DegenerateCalibration("null and planted means coincide")
    v0, v1 = float(a.var(ddof=1)), float(b.var(ddof=1))
    spread = math.sqrt(max(v0, v1))
    ratio = abs(mu1 - mu0) / spread if spread > 0 else SEPARATION_SENTINEL
    side = "above" if mu1 > mu0 else "below"
    return CalibrationReport(mu0, v0, mu1, v1, min(ratio, SEPARATION_SENTINEL), 0.5 * (mu0 + mu1), side)


def decide(value: float, threshold: float, planted_side: str = "above") -> DetectionOutcome:
    planted = value > threshold if planted_side == "above" else value < threshold
    return DetectionOutcome(float(value), "planted" if planted else "null", float(threshold), planted_side)


def bernoulli_delta_ok(c: float, delta: float) -> bool:
    return c * kl_bernoulli(delta, 2.0 ** (-(1.0 + delta))) / (1.0 + delta) > 1.0


def detect_from_recovery(graph: BipartiteGraph, estimate, design: str, k: int, slack: float,
                         c: float) -> DetectionOutcome:
    """Turn a recovery output into a planted/null decision.

    Planted iff the estimate has at most (1+slack)k members and covers at
    least (1-slack)M tests. ``slack`` is validated against c for the design.
    """
    design = normalize_design(design)
    if design == BERN:
        if not 0 < slack < 1 or not bernoulli_delta_ok(c, slack):
            raise ParameterError(f"delta={slack} fails c*D(delta||2^-(1+delta))/(1+delta) > 1 at c={c}")
    elif not slack > 1.0 / (2.0 * c * LN2**2):
        raise ParameterError(f"eta={slack} must exceed 1/(2 c ln^2 2) = {1 / (2 * c * LN2**2)}")
    est = np.asarray(estimate).astype(bool)
    members = np.flatnonzero(est)
    covered = int(graph.covered_tests(members).sum())
    need = (1.0 - slack) * graph.M
    ok = len(members) <= (1.0 + slack) * k and covered >= need
    return DetectionOutcome(float(covered), "planted" if ok else "null", float(need), "above")


# --- experiment -------------------------------------------------------------

STATISTICS = ("cc_variance_centered", "cc_variance", "bern_count", "bern_poly", "constant")


def default_statistic(design: str) -> str:
    return "cc_variance_centered" if normalize_design(design) == CC else "bern_count"


def _statistic(name: str, graph: BipartiteGraph, params: DesignParams, t: float, B_const: float) -> float:
    if name == "cc_variance":
        return cc_degree_variance(graph, params.delta)
    if name == "cc_variance_centered":
        return cc_degree_variance_centered(graph, params.delta)
    if name == "bern_count":
        return float(bern_high_degree_count(graph, params.q, t))
    if name == "bern_poly":
        return bern_poly_statistic(graph, params.q, t, B_const, n=params.n)
    if name == "constant":
        return 0.0
    raise ValueError(f"unknown statistic {name!r}")


def detection_pair(params: DesignParams, statistic: str, rng: np.random.Generator, t: float,
                   B_const: float = DEFAULT_B) -> tuple[float, float, int, int]:
    """One null and one planted sample of the statistic, matched in (N, M)."""
    if params.design == CC:
        red = sample_reduced_planted(params, rng)
        planted = red.graph
        null = gen_null_test(CC, planted.N, planted.M, params.delta, rng)
    else:
        N, M = params.center_dimensions()
        null = gen_null_test(BERN, N, M, params.q, rng)
        planted, _ = gen_planted_test(BERN, N, M, params.k, params.q, rng, method="exact")
    return (_statistic(statistic, null, params, t, B_const), _statistic(statistic, planted, params, t, B_const),
            planted.N, planted.M)


def _detection_trial(n, theta, c, design, statistic, t, B_const, seed, trial):
    params = DesignParams.from_scaling(n, theta, c, design)
    return detection_pair(params, statistic, trial_rng(seed, trial), t, B_const)


@dataclass(frozen=True, eq=False)
class DetectionExperiment:
    accuracy: float
    report: CalibrationReport | None
    rows: list
    t: float


def run_detection_experiment(design: str, theta: float, c: float, n: int, statistic: str | None = None,
                             trials: int = 200, rng: np.random.Generator | int = 0,
                             t: float | None = None, B_const: float = DEFAULT_B,
                             workers: int | None = None) -> DetectionExperiment:
    """Calibrate on the first half of the trials and score the second half.

    Each trial draws one null and one planted graph, so the held-out set has
    ``trials`` samples split evenly between the two labels.
    """
    design = normalize_design(design)
    statistic = statistic or default_statistic(design)
    if trials < 4:
        raise ValueError("need at least 4 trials")
    t = choose_t(theta, c) if t is None else t
    seed = master_seed(rng)
    jobs = [(int(n), theta, c, design, statistic, t, B_const, seed, i) for i in range(trials)]
    res = map_trials(_detection_trial, jobs, workers)
    half = trials // 2
    null = [r[0] for r in res]
    planted = [r[1] for r in res]
    try:
        report = calibrate(null[:half], planted[:half])
        thr, side = report.threshold, report.planted_side
    except DegenerateCalibration:
        report, thr, side = None, float(np.mean(null[:half])), "above"
    rows, correct, total = [], 0, 0
    for i, (s0, s1, _, _) in enumerate(res):
        for label, val in (("null", s0), ("planted", s1)):
            out = decide(val, thr, side)
            rows.append({"trial": i, "label": label, "statistic": val, "decision": out.decision,
                         "held_out": i >= half})
            if i >= half:
                total += 1
                correct += out.decision == label
    return DetectionExperiment(correct / total, report, rows, t)
