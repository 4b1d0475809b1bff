"""Recovery algorithms and exhaustive solution-set combinatorics on small instances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .designs import CC, DesignParams, Instance, ReducedInstance, sample_reduced_planted
from .parallel import map_trials, master_seed, trial_rng

MAX_SUBSETS = 10**8
MAX_PAIR_SOLUTIONS = 30_000
_CHUNK = 1 << 18


class SizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


class EmptySolutionSet(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    estimate: np.ndarray
    overlap: float
    overlap_raw: int
    false_pos: int
    false_neg: int


@dataclass(frozen=True, eq=False)
class OverlapSpectrum:
    k: int
    counts: np.ndarray
    Z: int
    mode: str = "vs_truth"


def score(estimate, truth) -> RecoveryResult:
    """Normalised and raw overlap of a 0/1 estimate with the truth."""
    est = np.asarray(estimate).astype(np.uint8)
    tru = np.asarray(truth).astype(bool)
    raw = int(np.count_nonzero(est.astype(bool) & tru))
    size, k = int(est.sum()), int(tru.sum())
    norm = raw / math.sqrt(size * k) if size and k else 0.0
    return RecoveryResult(est, norm, raw, size - raw, k - raw)


def comp_recover(instance: Instance) -> RecoveryResult:
    """Declare everyone who is in no negative test infected."""
    return separate_decoding(instance, 0)


def separate_decoding(instance: Instance, pos_threshold: int) -> RecoveryResult:
    """COMP survivors that sit in at least ``pos_threshold`` positive tests."""
    g = instance.graph
    positive = instance.outcomes.astype(bool)
    rows = g.edge_rows()
    neg = np.bincount(rows, weights=~positive[g.indices], minlength=g.N)
    pos = np.bincount(rows, weights=positive[g.indices], minlength=g.N)
    est = ((neg == 0) & (pos >= pos_threshold)).astype(np.uint8)
    return score(est, instance.sigma)


# --- exhaustive enumeration ------------------------------------------------

def _test_masks(reduced: ReducedInstance) -> np.ndarray:
    g = reduced.graph
    masks = np.zeros(g.M, dtype=np.uint64)
    for i, row in enumerate(g.adjacency):
        masks[row] |= np.uint64(1) << np.uint64(i)
    return masks


def _subset_chunks(N: int, k: int):
    """Bitmasks of all k-subsets of range(N) in lexicographic order, chunked."""
    bits = [1 << i for i in range(N)]
    it = itertools.combinations(bits, k)
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        yield np.fromiter((sum(b) for b in block), dtype=np.uint64, count=len(block))


def _check_size(N: int, k: int):
    if N > 63:
        raise SizeError(f"N={N} too large for bitmask enumeration")
    if math.comb(N, k) > MAX_SUBSETS:
        raise SizeError(f"C({N},{k}) = {math.comb(N, k)} exceeds {MAX_SUBSETS}")


def solution_masks(reduced: ReducedInstance, k: int) -> np.ndarray:
    """All k-subsets covering every test, as uint64 bitmasks in lexicographic order."""
    N = reduced.N
    _check_size(N, k)
    if k > N:
        return np.empty(0, dtype=np.uint64)
    tests = _test_masks(reduced)
    # tests with the fewest members prune the most, so check them first
    tests = tests[np.argsort(np.bitwise_count(tests), kind="stable")]
    found = []
    for subs in _subset_chunks(N, k):
        ok = np.ones(len(subs), dtype=bool)
        for t in tests:
            ok &= (subs & t) != 0
            if not ok.any():
                break
        found.append(subs[ok])
    return np.concatenate(found) if found else np.empty(0, dtype=np.uint64)


def _mask_of(vec) -> np.uint64:
    m = 0
    for i in np.flatnonzero(vec):
        m |= 1 << int(i)
    return np.uint64(m)


def mask_to_vector(mask, N: int) -> np.ndarray:
    m = int(mask)
    return np.array([(m >> i) & 1 for i in range(N)], dtype=np.uint8)


def enumerate_solutions(reduced: ReducedInstance, k: int, mode: str = "vs_truth",
                        solutions: np.ndarray | None = None) -> OverlapSpectrum:
    """Overlap histogram of the solution set.

    ``vs_truth`` counts solutions by overlap with the planted set;
    ``pairs`` counts ordered pairs of solutions by their mutual overlap.
    """
    sols = solution_masks(reduced, k) if solutions is None else solutions
    counts = np.zeros(k + 1, dtype=np.int64)
    if mode == "vs_truth":
        ov = np.bitwise_count(sols & _mask_of(reduced.sigma_prime)).astype(np.int64)
        counts += np.bincount(ov, minlength=k + 1)[:k + 1]
    elif mode == "pairs":
        if len(sols) > MAX_PAIR_SOLUTIONS:
            raise SizeError(f"{len(sols)} solutions is too many for pair counting")
        step = max(1, 4_000_000 // max(1, len(sols)))
        for s in range(0, len(sols), step):
            ov = np.bitwise_count(sols[s:s + step, None] & sols[None, :]).astype(np.int64)
            counts += np.bincount(ov.ravel(), minlength=k + 1)[:k + 1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return OverlapSpectrum(k, counts, int(len(sols)), mode)


def sample_uniform_solution(reduced: ReducedInstance, k: int, rng: np.random.Generator,
                            solutions: np.ndarray | None = None) -> np.ndarray:
    """A uniformly random element of the solution set as a 0/1 vector."""
    sols = solution_masks(reduced, k) if solutions is None else solutions
    if len(sols) == 0:
        raise EmptySolutionSet("no k-subset covers every test")
    return mask_to_vector(sols[rng.integers(len(sols))], reduced.N)


def brute_force_map(reduced: ReducedInstance, k: int) -> RecoveryResult:
    """First solution in lexicographic order, scored against the planted set."""
    _check_size(reduced.N, k)
    tests = _test_masks(reduced)
    for subs in _subset_chunks(reduced.N, k):
        ok = np.ones(len(subs), dtype=bool)
        for t in tests:
            ok &= (subs & t) != 0
        hit = np.flatnonzero(ok)
        if len(hit):
            return score(mask_to_vector(subs[hit[0]], reduced.N), reduced.sigma_prime)
    raise EmptySolutionSet("no k-subset covers every test")


# --- all-or-nothing experiment ----------------------------------------------

@dataclass(frozen=True)
class AonRow:
    c: float
    trial: int
    overlap_norm: float
    overlap_raw: int
    Z: int


def _aon_trial(n: int, theta: float, c: float, design: str, seed: int, trial: int, stream: int) -> AonRow:
    params = DesignParams.from_scaling(n, theta, c, design)
    rng = trial_rng(seed, trial, stream)
    red = sample_reduced_planted(params, rng)
    sols = solution_masks(red, params.k)
    tau = sample_uniform_solution(red, params.k, rng, solutions=sols)
    res = score(tau, red.sigma_prime)
    return AonRow(c, trial, res.overlap, res.overlap_raw, int(len(sols)))


def aon_experiment(theta: float, c_grid: Sequence[float], n: int, trials: int,
                   rng: np.random.Generator | int = 0, design: str = CC,
                   workers: int | None = None) -> tuple[list[dict], list[AonRow]]:
    """Mean overlap of a uniform solution with the truth, per c.

    Returns the summary table (one row per c) and the per-trial rows.
    """
    seed = master_seed(rng)
    jobs = [(n, theta, c, design, seed, t, ci) for ci, c in enumerate(c_grid) for t in range(trials)]
    rows = map_trials(_aon_trial, jobs, workers)
    summary = []
    for c in c_grid:
        ov = np.array([r.overlap_norm for r in rows if r.c == c])
        summary.append({"c": c, "mean_overlap": float(ov.mean()), "std_overlap": float(ov.std()),
                        "trials": len(ov)})
    return summary, rows
