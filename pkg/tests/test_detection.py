from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtlab.designs import BERN, CC, BipartiteGraph, bernoulli_q, gen_null_test, gen_planted_test
from gtlab.detection import (SEPARATION_SENTINEL, DegenerateCalibration, ParameterError, bern_high_degree_count,
                             bern_poly_statistic, bernoulli_delta_ok, calibrate, cc_degree_variance,
                             cc_degree_variance_centered, cc_null_mean, choose_t, decide, degree_threshold,
                             detect_from_recovery, poly_degree_b, poly_indicator, run_detection_experiment)
from gtlab.numerics import binom_tail
from gtlab.parallel import trial_rng
from gtlab.thresholds import LN2


def _lagrange_fraction(x, a, b):
    x = Fraction(x)
    total = Fraction(0)
    for j in range(a, b):
        term = Fraction(1)
        for l in range(b):
            if l != j:
                term *= (x - l) / (j - l)
        total += term
    return total


def test_cc_variance_regular_and_identity():
    g = BipartiteGraph.from_adjacency(4, [[0, 1], [2, 3], [0, 2], [1, 3]])
    assert cc_degree_variance(g, 2) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = gen_null_test(CC, 37, 11, 3, rng)
        direct = sum((Fraction(int(x)) - Fraction(37 * 3, 11)) ** 2 for x in g.test_degrees)
        assert cc_degree_variance(g, 3) == float(direct)
        assert cc_degree_variance(g, 3) == float(Fraction(int(np.sum(g.test_degrees.astype(np.int64) ** 2)))
                                                   - Fraction((37 * 3) ** 2, 11))


def test_cc_variance_null_mean():
    N, M, delta = 200, 50, 5
    vals = np.array([cc_degree_variance(gen_null_test(CC, N, M, delta, trial_rng(0, i)), delta) for i in range(1000)])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - cc_null_mean(N, M, delta)) <= 3 * se
    g = gen_null_test(CC, N, M, delta, trial_rng(0, 0))
    assert cc_degree_variance_centered(g, delta) == pytest.approx(vals[0] - N * delta * (1 - delta / M))


def test_choose_t():
    assert choose_t(0.3, 0.3) == 2.0
    # 0.75 is below 1/(2 ln^2 2) = 1.0407, so the first branch applies
    assert choose_t(0.3, 0.75) == 2.0
    assert choose_t(0.3, 1.5) == pytest.approx(1 / (1.5 * LN2**2))
    assert choose_t(0.3, 1.5) == pytest.approx(1.387579, abs=1e-6)
    assert choose_t(0.3, 1 / LN2**2) == pytest.approx(1.05)
    # the middle branch tends to 1 at the seam
    assert choose_t(0.3, (1 / LN2**2) * (1 - 1e-12)) == pytest.approx(1.0, abs=1e-9)
    assert choose_t(0.3, 3.0, eps=0.2) == 1.2


def test_high_degree_count_basic():
    empty = BipartiteGraph.from_adjacency(10, [[] for _ in range(6)])
    assert bern_high_degree_count(empty, 0.1, 2.0) == 0
    assert bern_high_degree_count(empty, 0.1, 0.0) == 6
    assert degree_threshold(0.1, 10, math.inf) == math.inf


def test_high_degree_count_null_mean():
    N, M, q, t = 500, 200, 0.02, 1.5
    d = degree_threshold(q, M, t)
    vals = np.array([bern_high_degree_count(gen_null_test(BERN, N, M, q, trial_rng(1, i)), q, t) for i in range(1000)])
    expect = N * binom_tail(M, q, int(d), "upper")
    assert abs(vals.mean() - expect) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_high_degree_count_permutation_invariant():
    rng = np.random.default_rng(2)
    g = gen_null_test(BERN, 80, 60, 0.05, rng)
    base = bern_high_degree_count(g, 0.05, 1.3)
    for _ in range(5):
        h = g.permuted(rng.permutation(80), rng.permutation(60))
        assert bern_high_degree_count(h, 0.05, 1.3) == base


def test_poly_indicator_nodes():
    rng = np.random.default_rng(4)
    for _ in range(50):
        b = int(rng.integers(1, 40)) * 2 + 1
        a = int(rng.integers(0, b))
        for x in range(b):
            assert poly_indicator(x, a, b) == (1.0 if x >= a else 0.0)


def test_poly_indicator_off_nodes():
    assert poly_indicator(5, 2, 5) == float(_lagrange_fraction(5, 2, 5))
    for x in [5, 6, 9, 30]:
        for a, b in [(2, 5), (3, 7), (10, 21)]:
            assert poly_indicator(x, a, b) == float(_lagrange_fraction(x, a, b))
    for x in [2.5, 4.75, 5.5, -0.5]:
        exact = float(_lagrange_fraction(Fraction(x), 2, 7))
        assert poly_indicator(x, 2, 7) == pytest.approx(exact, rel=1e-10, abs=1e-12)
    with pytest.raises(ValueError):
        poly_indicator(1, 3, 4)
    with pytest.raises(ValueError):
        poly_indicator(1, 5, 5)


def test_poly_degree():
    b = poly_degree_b(10**5, 8)
    assert b % 2 == 1 and b > 8 * math.log(10**5) and b - 2 <= 8 * math.log(10**5)


def test_poly_statistic_equals_count_when_degrees_small():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = gen_null_test(BERN, 200, 100, 0.05, rng)
        assert bern_poly_statistic(g, 0.05, 1.5, n=10**5) == bern_high_degree_count(g, 0.05, 1.5)


def test_poly_statistic_monotone_in_t():
    g = gen_null_test(BERN, 300, 150, 0.05, np.random.default_rng(6))
    vals = [bern_poly_statistic(g, 0.05, t, n=10**5) for t in (1.1, 1.5, 2.0, 3.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_calibrate():
    rep = calibrate([0, 0, 0], [2, 2, 2])
    assert rep.threshold == 1.0 and rep.separation_ratio == SEPARATION_SENTINEL and rep.planted_side == "above"
    flip = calibrate([2, 2, 2], [0, 0, 0])
    assert flip.planted_side == "below"
    assert decide(0.5, flip.threshold, flip.planted_side).decision == "planted"
    assert decide(0.5, rep.threshold, rep.planted_side).decision == "null"
    with pytest.raises(DegenerateCalibration):
        calibrate([1, 1], [1, 1])
    with pytest.raises(ValueError):
        calibrate([1], [2, 3])
    rep = calibrate([0, 1, 2], [4, 5, 6])
    assert rep.var_null == pytest.approx(1.0) and rep.separation_ratio == pytest.approx(4.0)


def test_detect_from_recovery():
    k, M = 4, 30
    g, inf = gen_planted_test(BERN, 40, M, k, bernoulli_q(k), np.random.default_rng(0))
    est = np.zeros(40, dtype=np.uint8)
    est[inf] = 1
    assert detect_from_recovery(g, est, BERN, k, 0.001, 1.5).decision == "planted"
    assert detect_from_recovery(g, np.zeros(40), BERN, k, 0.001, 1.5).decision == "null"
    # the condition tends to c ln 2 > 1 as delta -> 0 and fails already at delta = 0.1
    assert bernoulli_delta_ok(1.5, 0.001)
    assert not bernoulli_delta_ok(1.5, 0.1)
    with pytest.raises(ParameterError):
        detect_from_recovery(g, est, BERN, k, 0.1, 1.5)
    with pytest.raises(ParameterError):
        detect_from_recovery(g, est, BERN, k, 0.001, 0.5)
    with pytest.raises(ParameterError):
        detect_from_recovery(g, est, CC, k, 0.1, 1.5)
    assert detect_from_recovery(g, est, CC, k, 0.75, 1.5).decision == "planted"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_detect_from_recovery_monotone(seed):
    rng = np.random.default_rng(seed)
    g = gen_null_test(BERN, 30, 20, 0.1, rng)
    est = (rng.random(30) < 0.15).astype(np.uint8)
    before = detect_from_recovery(g, est, BERN, 5, 0.001, 1.5)
    # give one member of the estimate an extra uncovered test
    members = np.flatnonzero(est)
    uncovered = np.flatnonzero(~g.covered_tests(members))
    if len(members) == 0 or len(uncovered) == 0:
        return
    adj = [list(r) for r in g.adjacency]
    adj[int(members[0])].append(int(uncovered[0]))
    after = detect_from_recovery(BipartiteGraph.from_adjacency(20, adj), est, BERN, 5, 0.001, 1.5)
    assert not (before.decision == "planted" and after.decision == "null")


def test_constant_statistic_is_chance():
    exp = run_detection_experiment(BERN, 0.3, 1.5, 10**4, statistic="constant", trials=20, rng=0)
    assert exp.report is None and exp.accuracy == 0.5


def test_experiment_rows_and_workers():
    a = run_detection_experiment(CC, 0.2, 2.0, 10**4, trials=40, rng=3, workers=1)
    b = run_detection_experiment(CC, 0.2, 2.0, 10**4, trials=40, rng=3, workers=4)
    assert a.rows == b.rows and a.accuracy == b.accuracy
    assert len(a.rows) == 80 and sum(r["held_out"] for r in a.rows) == 40


def test_cc_separation_grows():
    r5 = run_detection_experiment(CC, 0.2, 2.0, 10**5, trials=200, rng=7).report
    r6 = run_detection_experiment(CC, 0.2, 2.0, 10**6, trials=200, rng=7).report
    assert r6.separation_ratio > r5.separation_ratio


def test_statistics_label_symmetric():
    rng = np.random.default_rng(8)
    g = gen_null_test(CC, 50, 20, 3, rng)
    h = g.permuted(rng.permutation(50), rng.permutation(20))
    assert cc_degree_variance(g, 3) == cc_degree_variance(h, 3)
    g = gen_null_test(BERN, 50, 20, 0.1, rng)
    h = g.permuted(rng.permutation(50), rng.permutation(20))
    assert bern_poly_statistic(g, 0.1, 1.5, n=10**4) == bern_poly_statistic(h, 0.1, 1.5, n=10**4)
