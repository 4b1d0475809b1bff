from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from gtlab.designs import (BERN, CC, BipartiteGraph, DesignParams, ReducedInstance, comp_reduce, gen_instance,
                           gen_planted_test, sample_reduced_planted)
from gtlab.parallel import trial_rng
from gtlab.recovery import (EmptySolutionSet, SizeError, aon_experiment, brute_force_map, comp_recover,
                            enumerate_solutions, mask_to_vector, sample_uniform_solution, score,
                            separate_decoding, solution_masks)


def _reduced(adjacency, M, infected):
    N = len(adjacency)
    sigma = np.zeros(N, dtype=np.uint8)
    sigma[list(infected)] = 1
    return ReducedInstance(BipartiteGraph.from_adjacency(M, adjacency), sigma, np.arange(N))


def _tiny_planted(seed, N=12, M=6, k=3, delta=2):
    g, inf = gen_planted_test(CC, N, M, k, delta, np.random.default_rng(seed), method="rejection")
    sigma = np.zeros(N, dtype=np.uint8)
    sigma[inf] = 1
    return ReducedInstance(g, sigma, np.arange(N))


def _brute_solutions(red, k):
    adj = red.graph.to_dense()
    return [s for s in itertools.combinations(range(red.N), k) if adj[list(s)].any(axis=0).all()]


def test_score():
    r = score([1, 1, 0, 0], [1, 0, 1, 0])
    assert r.overlap_raw == 1 and r.false_pos == 1 and r.false_neg == 1
    assert r.overlap == pytest.approx(0.5)
    assert score([0, 0], [1, 0]).overlap == 0.0


@pytest.mark.parametrize("design", [CC, BERN])
def test_comp_no_false_negatives(design):
    for i in range(5):
        p = DesignParams.from_scaling(5000, 0.3, 1.0 + 0.3 * i, design)
        inst = gen_instance(p, trial_rng(0, i))
        res = comp_recover(inst)
        assert res.false_neg == 0
        assert np.array_equal(separate_decoding(inst, 0).estimate, res.estimate)
        # the COMP estimate is exactly the reduced population
        assert res.estimate.sum() == comp_reduce(inst).N


def test_comp_perfect_when_all_healthy_hit_negative():
    p = DesignParams.from_scaling(2000, 0.3, 4.0, CC)
    inst = gen_instance(p, trial_rng(1, 0))
    assert comp_recover(inst).overlap == 1.0


def test_separate_decoding_cc_delta_threshold():
    p = DesignParams.from_scaling(5000, 0.3, 1.5, CC)
    inst = gen_instance(p, trial_rng(2, 0))
    assert np.array_equal(separate_decoding(inst, p.delta).estimate, comp_recover(inst).estimate)


def test_comp_overlap_high_budget():
    # COMP overlap on a reduced instance is sqrt(k / N'); the fast sampler gives N'
    p = DesignParams.from_scaling(10**6, 0.3, 3.0, CC)
    ov = [math.sqrt(p.k / sample_reduced_planted(p, trial_rng(3, i)).N) for i in range(50)]
    assert np.mean(np.array(ov) >= 0.9) >= 0.9


def test_separate_decoding_beats_comp_bernoulli():
    p = DesignParams.from_scaling(10**5, 0.3, 2.3, BERN)
    wins = 0
    for i in range(50):
        inst = gen_instance(p, trial_rng(4, i))
        positives = int(inst.outcomes.sum())
        sd = separate_decoding(inst, math.ceil(1.5 * p.q * positives))
        wins += sd.overlap > comp_recover(inst).overlap
    assert wins >= 30


def test_enumerate_no_tests():
    red = _reduced([[] for _ in range(7)], 0, [0, 1, 2])
    spectrum = enumerate_solutions(red, 3)
    assert spectrum.Z == math.comb(7, 3)
    hyper = [math.comb(3, l) * math.comb(4, 3 - l) for l in range(4)]
    assert spectrum.counts.tolist() == hyper


def test_enumerate_single_test():
    N, k = 9, 3
    red = _reduced([[0] if i < k else [] for i in range(N)], 1, range(k))
    assert enumerate_solutions(red, k).Z == math.comb(N, k) - math.comb(N - k, k)


def test_enumerate_matches_brute_force():
    for seed in range(15):
        red = _tiny_planted(seed)
        sols = _brute_solutions(red, 3)
        spectrum = enumerate_solutions(red, 3)
        assert spectrum.Z == len(sols) >= 1
        assert spectrum.counts[3] >= 1
        truth = set(red.infected.tolist())
        by_overlap = np.bincount([len(truth & set(s)) for s in sols], minlength=4)
        assert spectrum.counts.tolist() == by_overlap.tolist()
        pairs = enumerate_solutions(red, 3, mode="pairs")
        assert pairs.counts[3] == spectrum.Z
        assert pairs.counts.sum() == spectrum.Z**2


def test_enumerate_size_limits():
    red = _reduced([[] for _ in range(64)], 0, [0])
    with pytest.raises(SizeError):
        enumerate_solutions(red, 1)
    red = _reduced([[] for _ in range(60)], 0, [0])
    with pytest.raises(SizeError):
        solution_masks(red, 12)
    with pytest.raises(ValueError):
        enumerate_solutions(_tiny_planted(0), 3, mode="triples")


def test_unique_solution():
    red = _reduced([[0], [1], [], [], [], []], 2, [0, 1])
    assert enumerate_solutions(red, 2).Z == 1
    assert sample_uniform_solution(red, 2, np.random.default_rng(0)).tolist() == red.sigma_prime.tolist()
    assert brute_force_map(red, 2).overlap == 1.0


def test_empty_solution_set():
    red = _reduced([[0], [1], [2]], 3, [0])
    with pytest.raises(EmptySolutionSet):
        sample_uniform_solution(red, 1, np.random.default_rng(0))
    with pytest.raises(EmptySolutionSet):
        brute_force_map(red, 1)


def _small_solution_instance():
    for seed in range(1000):
        red = _tiny_planted(seed, N=10, M=5, k=3, delta=2)
        if 4 <= enumerate_solutions(red, 3).Z <= 20:
            return red
    raise AssertionError("no instance with a small solution set")


def test_uniform_sampler_frequencies():
    red = _small_solution_instance()
    sols = solution_masks(red, 3)
    rng = np.random.default_rng(12)
    draws = 100_000
    keys = {int(s): i for i, s in enumerate(sols)}
    counts = np.zeros(len(sols))
    for _ in range(draws):
        v = sample_uniform_solution(red, 3, rng, solutions=sols)
        counts[keys[sum(1 << int(i) for i in np.flatnonzero(v))]] += 1
    p = 1 / len(sols)
    band = 4 * math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= band)
    spectrum = enumerate_solutions(red, 3, solutions=sols)
    expected = float(np.dot(np.arange(4), spectrum.counts)) / (3 * spectrum.Z)
    overlaps = [len(set(np.flatnonzero(mask_to_vector(s, red.N))) & set(red.infected)) / 3 for s in sols]
    observed = float(np.dot(counts, overlaps)) / draws
    assert observed == pytest.approx(expected, rel=0.02)


def test_brute_force_map_in_solution_set():
    for seed in range(10):
        red = _tiny_planted(seed)
        res = brute_force_map(red, 3)
        chosen = tuple(np.flatnonzero(res.estimate))
        assert chosen in _brute_solutions(red, 3)
        assert chosen == _brute_solutions(red, 3)[0]


def test_brute_force_map_high_budget_tiny():
    # N=20, k=4 with M close to k*Delta/(2 ln 2) and Delta large enough for few spurious solutions
    ov = []
    for i in range(100):
        g, inf = gen_planted_test(CC, 20, 35, 4, 12, trial_rng(1, i), method="rejection")
        sigma = np.zeros(20, dtype=np.uint8)
        sigma[inf] = 1
        ov.append(brute_force_map(ReducedInstance(g, sigma, np.arange(20)), 4).overlap)
    assert np.mean(ov) >= 0.8


def test_aon_shapes_and_trend():
    summary, rows = aon_experiment(0.3, [], 60, 10)
    assert summary == [] and rows == []
    grid = [0.5, 1.0, 1.44, 2.0, 3.0]
    summary, rows = aon_experiment(0.3, grid, 60, 100, rng=0)
    assert [s["c"] for s in summary] == grid
    assert len(rows) == 100 * len(grid)
    means = [s["mean_overlap"] for s in summary]
    assert all(a < b for a, b in zip(means, means[1:]))
    assert means[0] < 0.2 and means[-1] > 0.9


def test_aon_workers_agree():
    grid = [0.8, 2.0]
    a = aon_experiment(0.3, grid, 60, 20, rng=5, workers=1)
    b = aon_experiment(0.3, grid, 60, 20, rng=5, workers=3)
    assert a == b
