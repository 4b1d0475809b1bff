"""Random group-testing instances, COMP reduction and the null/planted graph laws.

Graphs are stored individual-major in CSR form: ``indices[indptr[i]:indptr[i+1]]``
is the sorted list of tests individual ``i`` takes part in.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .numerics import log_binomial
from .thresholds import LN2, normalize_design

CC = "constant_column"
BERN = "bernoulli"

REJECTION_CAP = 10**6
VIA_COMP_MIN_TESTS = 64


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def bernoulli_q(k: int) -> float:
    """Edge probability q with (1 - q)^k = 1/2 exactly."""
    return -math.expm1(-LN2 / k)


@dataclass(frozen=True)
class DesignParams:
    n: int
    theta: float
    c: float
    k: int
    m: int
    delta: int
    nu: float
    q: float
    design: str
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.m < 1:
            raise ValueError(f"need m >= 1, got {self.m}")
        if self.design == CC and not 1 <= self.delta <= self.m:
            raise ValueError(f"need 1 <= delta <= m, got delta={self.delta}, m={self.m}")

    @classmethod
    def from_scaling(cls, n: int, theta: float, c: float, design: str, seed: int = 0) -> "DesignParams":
        """Derive k, m, Delta and q from (n, theta, c) with round-half-up."""
        design = normalize_design(design)
        n = int(n)
        k = max(1, round_half_up(n**theta))
        log_ratio = math.log(n / k)
        m = round_half_up(c * k * log_ratio)
        delta = max(1, round_half_up(c * LN2 * log_ratio)) if design == CC else 0
        q = bernoulli_q(k)
        return cls(n=n, theta=theta, c=c, k=k, m=m, delta=delta, nu=k * q, q=q, design=design, seed=seed)

    def degree_or_q(self) -> float:
        return self.delta if self.design == CC else self.q

    def center_dimensions(self) -> tuple[int, int]:
        """Nominal post-COMP (N, M) used when sampling the testing laws directly."""
        lr = math.log(self.n / self.k)
        if self.design == CC:
            expo = 1.0 - (1.0 - self.theta) * self.c * LN2**2
        else:
            expo = 1.0 - (1.0 - self.theta) * (self.c / 2.0) * LN2
        N = max(self.k, round_half_up(self.n**expo))
        M = max(1, round_half_up(self.c / 2.0 * self.k * lr))
        return N, M


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    num_individuals: int
    num_tests: int
    indptr: np.ndarray
    indices: np.ndarray
    test_degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        if indptr.shape != (self.num_individuals + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
            raise ValueError("malformed indptr")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.num_tests):
            raise ValueError("test index out of range")
        # strictly increasing within each row rules out multi-edges
        if len(indices) > 1:
            step = np.diff(indices)
            row_start = np.zeros(len(indices), dtype=bool)
            row_start[indptr[:-1][indptr[:-1] < len(indices)]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("adjacency rows must be strictly increasing")
        degs = np.bincount(indices, minlength=self.num_tests).astype(np.int64)
        object.__setattr__(self, "test_degrees", degs)

    @classmethod
    def from_edges(cls, N: int, M: int, rows, cols) -> "BipartiteGraph":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(N + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=N), out=indptr[1:])
        return cls(N, M, indptr, cols)

    @classmethod
    def from_adjacency(cls, M: int, adjacency: Iterable[Iterable[int]]) -> "BipartiteGraph":
        rows_list = [sorted(int(j) for j in row) for row in adjacency]
        indptr = np.zeros(len(rows_list) + 1, dtype=np.int64)
        np.cumsum([len(r) for r in rows_list], out=indptr[1:])
        flat = np.fromiter((j for r in rows_list for j in r), dtype=np.int64, count=int(indptr[-1]))
        return cls(len(rows_list), M, indptr, flat)

    @classmethod
    def from_dense(cls, mat) -> "BipartiteGraph":
        mat = np.asarray(mat, dtype=bool)
        rows, cols = np.nonzero(mat)
        return cls.from_edges(mat.shape[0], mat.shape[1], rows, cols)

    @property
    def N(self) -> int:
        return self.num_individuals

    @property
    def M(self) -> int:
        return self.num_tests

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.indices[self.indptr[i]:self.indptr[i + 1]] for i in range(self.N)]

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return int(self.indptr[-1])

    def edge_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.N, dtype=np.int64), self.degrees)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.N, self.M), dtype=bool)
        out[self.edge_rows(), self.indices] = True
        return out

    def covered_tests(self, individuals) -> np.ndarray:
        """Boolean mask of tests containing at least one of the given individuals."""
        mask = np.zeros(self.M, dtype=bool)
        for i in np.asarray(individuals, dtype=np.int64):
            mask[self.neighbors(int(i))] = True
        return mask

    def permuted(self, individual_perm=None, test_perm=None) -> "BipartiteGraph":
        """Relabel individuals and/or tests; ``perm[old] = new``."""
        rows, cols = self.edge_rows(), self.indices
        if individual_perm is not None:
            rows = np.asarray(individual_perm)[rows]
        if test_perm is not None:
            cols = np.asarray(test_perm)[cols]
        return BipartiteGraph.from_edges(self.N, self.M, rows, cols)

    def __eq__(self, other):
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return (self.N == other.N and self.M == other.M and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Instance:
    params: DesignParams
    graph: BipartiteGraph
    sigma: np.ndarray
    outcomes: np.ndarray

    @property
    def infected(self) -> np.ndarray:
        return np.flatnonzero(self.sigma)


@dataclass(frozen=True, eq=False)
class ReducedInstance:
    graph: BipartiteGraph
    sigma_prime: np.ndarray
    origin_indices: np.ndarray

    @property
    def infected(self) -> np.ndarray:
        return np.flatnonzero(self.sigma_prime)

    @property
    def N(self) -> int:
        return self.graph.N

    @property
    def M(self) -> int:
        return self.graph.M

    @property
    def k(self) -> int:
        return int(np.count_nonzero(self.sigma_prime))


# --- samplers -------------------------------------------------------------

def _fixed_degree_rows(rng: np.random.Generator, rows: int, m: int, delta: int) -> np.ndarray:
    """(rows, delta) array, each row a uniform sorted delta-subset of range(m)."""
    if delta > m:
        raise ValueError(f"degree {delta} exceeds number of tests {m}")
    if rows == 0 or delta == 0:
        return np.zeros((rows, delta), dtype=np.int64)
    if delta == m:
        return np.tile(np.arange(m, dtype=np.int64), (rows, 1))
    if delta * delta <= m:
        # draw with replacement and redraw the rows that collided
        out = np.sort(rng.integers(0, m, size=(rows, delta)), axis=1)
        bad = np.flatnonzero(np.any(out[:, 1:] == out[:, :-1], axis=1)) if delta > 1 else np.empty(0, int)
        while len(bad):
            redo = np.sort(rng.integers(0, m, size=(len(bad), delta)), axis=1)
            out[bad] = redo
            still = np.any(redo[:, 1:] == redo[:, :-1], axis=1)
            bad = bad[still]
        return out
    out = np.empty((rows, delta), dtype=np.int64)
    chunk = max(1, 4_000_000 // m)
    for s in range(0, rows, chunk):
        keys = rng.random((min(chunk, rows - s), m))
        out[s:s + len(keys)] = np.sort(np.argpartition(keys, delta - 1, axis=1)[:, :delta], axis=1)
    return out


def _bernoulli_edges(rng: np.random.Generator, rows: int, m: int, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Edges of a rows-by-m iid Bernoulli(q) matrix, by geometric gap skipping."""
    total = rows * m
    if total == 0 or q <= 0.0:
        e = np.empty(0, dtype=np.int64)
        return e, e
    if q >= 1.0:
        pos = np.arange(total, dtype=np.int64)
    else:
        mu = total * q
        parts, last = [], -1
        while last < total - 1:
            batch = int(mu + 6.0 * math.sqrt(mu) + 16) if not parts else int(0.1 * mu + 64)
            gaps = rng.geometric(q, size=batch).astype(np.int64)
            p = last + np.cumsum(gaps)
            parts.append(p)
            last = int(p[-1])
        pos = np.concatenate(parts)
        pos = pos[pos < total]
    return pos // m, pos % m


def _graph_from_fixed_rows(M: int, mat: np.ndarray) -> BipartiteGraph:
    rows, delta = mat.shape
    indptr = np.arange(rows + 1, dtype=np.int64) * delta
    return BipartiteGraph(rows, M, indptr, mat.reshape(-1))


def _outcomes(graph: BipartiteGraph, sigma: np.ndarray) -> np.ndarray:
    out = np.zeros(graph.M, dtype=np.uint8)
    rows = graph.edge_rows()
    out[graph.indices[sigma[rows].astype(bool)]] = 1
    return out


def _random_subset_mask(rng: np.random.Generator, N: int, k: int) -> np.ndarray:
    mask = np.zeros(N, dtype=bool)
    mask[rng.choice(N, size=k, replace=False)] = True
    return mask


def gen_instance(params: DesignParams, rng: np.random.Generator | None = None) -> Instance:
    """Full pre-COMP instance: n individuals, m tests, k infected, outcomes."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    n, m = params.n, params.m
    if params.design == CC:
        graph = _graph_from_fixed_rows(m, _fixed_degree_rows(rng, n, m, params.delta))
    else:
        rows, cols = _bernoulli_edges(rng, n, m, params.q)
        graph = BipartiteGraph.from_edges(n, m, rows, cols)
    sigma = _random_subset_mask(rng, n, params.k).astype(np.uint8)
    return Instance(params, graph, sigma, _outcomes(graph, sigma))


def _reduce(graph: BipartiteGraph, sigma: np.ndarray, outcomes: np.ndarray) -> ReducedInstance:
    positive = np.asarray(outcomes).astype(bool)
    neg_edge = ~positive[graph.indices]
    neg_count = np.bincount(graph.edge_rows(), weights=neg_edge, minlength=graph.N)
    keep_row = neg_count == 0
    keep = np.flatnonzero(keep_row)
    new_col = np.cumsum(positive) - 1
    edge_keep = keep_row[graph.edge_rows()]
    indptr = np.zeros(len(keep) + 1, dtype=np.int64)
    np.cumsum(graph.degrees[keep], out=indptr[1:])
    g = BipartiteGraph(len(keep), int(positive.sum()), indptr, new_col[graph.indices[edge_keep]])
    return ReducedInstance(g, np.asarray(sigma)[keep].astype(np.uint8), keep.astype(np.int64))


def comp_reduce(instance: Instance | ReducedInstance) -> ReducedInstance:
    """Drop negative tests and everyone who appears in one."""
    if isinstance(instance, ReducedInstance):
        red = _reduce(instance.graph, instance.sigma_prime, np.ones(instance.M, dtype=np.uint8))
        return ReducedInstance(red.graph, red.sigma_prime, instance.origin_indices[red.origin_indices])
    return _reduce(instance.graph, instance.sigma, instance.outcomes)


def gen_null_test(design: str, N: int, M: int, degree_or_q: float, rng: np.random.Generator) -> BipartiteGraph:
    """Null law: fixed degree Delta per individual, or iid Bernoulli(q) edges."""
    design = normalize_design(design)
    if design == CC:
        delta = int(degree_or_q)
        if delta > M:
            raise ValueError(f"degree {delta} exceeds number of tests {M}")
        return _graph_from_fixed_rows(M, _fixed_degree_rows(rng, N, M, delta))
    rows, cols = _bernoulli_edges(rng, N, M, float(degree_or_q))
    return BipartiteGraph.from_edges(N, M, rows, cols)


def _truncated_binom_counts(rng: np.random.Generator, size: int, k: int, q: float) -> np.ndarray:
    """Samples of Binom(k, q) conditioned on being >= 1, by inverse CDF."""
    s = np.arange(1, k + 1)
    logpmf = (np.array([log_binomial(k, int(j)) for j in s]) + s * math.log(q) + (k - s) * math.log1p(-q))
    pmf = np.exp(logpmf - logpmf.max())
    cdf = np.cumsum(pmf)
    cdf /= cdf[-1]
    return s[np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), k - 1)]


class RejectionCapExceeded(RuntimeError):
    pass


def _covering_rows(rng: np.random.Generator, k: int, M: int, delta: int, max_attempts: int) -> np.ndarray:
    """(k, delta) fixed-degree rows conditioned on covering all M tests, by batched rejection.

    Attempts are drawn in growing batches and the first covering one is kept,
    which is the same law as drawing them one at a time.
    """
    if M == 0:
        return _fixed_degree_rows(rng, k, M, delta)
    if k * delta < M:
        raise RejectionCapExceeded(f"{k} rows of degree {delta} cannot cover {M} tests")
    done, batch = 0, 1
    while done < max_attempts:
        b = min(batch, max_attempts - done)
        rows = _fixed_degree_rows(rng, b * k, M, delta).reshape(b, k * delta)
        hit = np.zeros((b, M), dtype=bool)
        hit[np.repeat(np.arange(b), k * delta), rows.ravel()] = True
        ok = np.flatnonzero(hit.all(axis=1))
        if len(ok):
            return rows[ok[0]].reshape(k, delta)
        done += b
        batch = min(batch * 4, 4096)
    raise RejectionCapExceeded(f"no covering draw in {max_attempts} attempts; use via_comp")


def gen_planted_test(design: str, N: int | None, M: int | None, k: int | None, degree_or_q: float | None,
                     rng: np.random.Generator, method: str | None = None, params: DesignParams | None = None,
                     max_attempts: int = REJECTION_CAP):
    """Planted law: the null conditioned on every test holding an infected individual.

    Returns ``(graph, infected)`` with ``infected`` a sorted index array. For
    ``method='via_comp'`` a full DesignParams is required and (N, M) are the
    realised post-COMP dimensions.
    """
    design = normalize_design(design)
    if method is None:
        if design == BERN:
            method = "exact"
        else:
            method = "via_comp" if (M is None or M > VIA_COMP_MIN_TESTS) else "rejection"
    if method == "via_comp":
        if params is None:
            raise ValueError("via_comp needs DesignParams")
        red = sample_reduced_planted(params, rng)
        return red.graph, red.infected
    if N is None or M is None or k is None or degree_or_q is None:
        raise ValueError("exact and rejection sampling need N, M, k and degree_or_q")
    if k > N:
        raise ValueError(f"k={k} exceeds N={N}")
    infected_mask = _random_subset_mask(rng, N, k)
    infected = np.flatnonzero(infected_mask)
    healthy = np.flatnonzero(~infected_mask)

    if design == CC:
        delta = int(degree_or_q)
        if method not in ("rejection", "exact"):
            raise ValueError(f"unknown method {method!r}")
        inf_rows = _covering_rows(rng, k, M, delta, max_attempts)
        rest = _fixed_degree_rows(rng, N - k, M, delta)
        mat = np.empty((N, delta), dtype=np.int64)
        mat[infected], mat[healthy] = inf_rows, rest
        return _graph_from_fixed_rows(M, mat), infected

    q = float(degree_or_q)
    if method == "exact":
        counts = _truncated_binom_counts(rng, M, k, q) if M else np.empty(0, int)
        # which infected individuals carry the ones: uniform subset per test
        keys = rng.random((M, k))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        t_idx, slot = np.nonzero(ranks < counts[:, None])
        inf_rows, inf_cols = infected[slot], t_idx
    elif method == "rejection":
        for _ in range(max_attempts):
            r, cidx = _bernoulli_edges(rng, k, M, q)
            if M == 0 or len(np.unique(cidx)) == M:
                break
        else:
            raise RejectionCapExceeded(f"no covering draw in {max_attempts} attempts")
        inf_rows, inf_cols = infected[r], cidx
    else:
        raise ValueError(f"unknown method {method!r}")
    hr, hc = _bernoulli_edges(rng, N - k, M, q)
    rows = np.concatenate([inf_rows, healthy[hr]])
    cols = np.concatenate([inf_cols, hc])
    return BipartiteGraph.from_edges(N, M, rows, cols), infected


def sample_reduced_planted(params: DesignParams, rng: np.random.Generator) -> ReducedInstance:
    """Post-COMP planted instance drawn without materialising the n-by-m graph.

    Conditionally on the infected individuals' tests, each healthy individual
    survives COMP independently and, given survival, its tests are uniform
    among the positive ones. Sampling the survivor count and their edges
    directly therefore has the same law as ``comp_reduce(gen_instance(...))``.
    """
    n, m, k = params.n, params.m, params.k
    if params.design == CC:
        inf_rows = _fixed_degree_rows(rng, k, m, params.delta)
    else:
        r, cidx = _bernoulli_edges(rng, k, m, params.q)
    positive = np.zeros(m, dtype=bool)
    if params.design == CC:
        positive[inf_rows.reshape(-1)] = True
    else:
        positive[cidx] = True
    M = int(positive.sum())
    new_col = np.cumsum(positive) - 1

    if params.design == CC:
        d = params.delta
        p_survive = math.exp(log_binomial(M, d) - log_binomial(m, d)) if d <= M else 0.0
    else:
        p_survive = (1.0 - params.q) ** (m - M)
    S = int(rng.binomial(n - k, p_survive))
    N = k + S
    origin_inf = rng.choice(n, size=k, replace=False)
    # survivors among the healthy: uniform S-subset of the n-k healthy labels
    healthy_pick = rng.choice(n - k, size=S, replace=False)
    taken = np.sort(origin_inf)
    healthy_labels = healthy_pick + np.searchsorted(taken - np.arange(k), healthy_pick, side="right")
    origin = np.concatenate([origin_inf, healthy_labels])
    order = np.argsort(origin, kind="stable")
    origin = origin[order]
    slot = np.empty(N, dtype=np.int64)
    slot[order] = np.arange(N)
    sigma_prime = np.zeros(N, dtype=np.uint8)
    sigma_prime[slot[:k]] = 1

    if params.design == CC:
        inf_mat = new_col[inf_rows]
        rest = _fixed_degree_rows(rng, S, M, params.delta)
        mat = np.empty((N, params.delta), dtype=np.int64)
        mat[slot[:k]] = inf_mat
        mat[slot[k:]] = rest
        graph = _graph_from_fixed_rows(M, mat)
    else:
        hr, hc = _bernoulli_edges(rng, S, M, params.q)
        rows = np.concatenate([slot[:k][r], slot[k:][hr]])
        cols = np.concatenate([new_col[cidx], hc])
        graph = BipartiteGraph.from_edges(N, M, rows, cols)
    return ReducedInstance(graph, sigma_prime, origin.astype(np.int64))


# --- text format ----------------------------------------------------------

def _design_token(design: str) -> str:
    return normalize_design(design)


def write_instance(obj, fh: TextIO | None = None, design: str | None = None) -> str:
    """Serialise an Instance or ReducedInstance to the line format.

    Layout: header ``GT v1 <design> <N> <M> <k>``, one line of test indices
    per individual, ``infected: ...`` and, for pre-COMP instances only,
    ``outcomes: <bits>``.
    """
    if isinstance(obj, Instance):
        graph, infected, outcomes = obj.graph, obj.infected, obj.outcomes
        design = obj.params.design
    elif isinstance(obj, ReducedInstance):
        graph, infected, outcomes = obj.graph, obj.infected, None
        if design is None:
            raise ValueError("design must be given for a reduced instance")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    buf = io.StringIO()
    buf.write(f"GT v1 {_design_token(design)} {graph.N} {graph.M} {len(infected)}\n")
    for row in graph.adjacency:
        buf.write(" ".join(map(str, row.tolist())) + "\n")
    buf.write("infected: " + " ".join(map(str, np.asarray(infected).tolist())) + "\n")
    if outcomes is not None:
        buf.write("outcomes: " + "".join("1" if b else "0" for b in outcomes) + "\n")
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


@dataclass(frozen=True, eq=False)
class ParsedInstance:
    design: str
    graph: BipartiteGraph
    infected: np.ndarray
    outcomes: np.ndarray | None


class FormatError(ValueError):
    pass


def read_instance(source: str | TextIO) -> ParsedInstance:
    """Parse the line format; leading ``#`` metadata lines are skipped."""
    text = source if isinstance(source, str) else source.read()
    lines = text.split("\n")
    while lines and lines[0].startswith("#"):
        lines.pop(0)
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty input")
    head = lines[0].split()
    if len(head) != 6 or head[:2] != ["GT", "v1"]:
        raise FormatError(f"bad header {lines[0]!r}")
    design = normalize_design(head[2])
    N, M, k = (int(x) for x in head[3:])
    if len(lines) < N + 2:
        raise FormatError("truncated instance")
    adjacency = [[int(x) for x in ln.split()] for ln in lines[1:N + 1]]
    graph = BipartiteGraph.from_adjacency(M, adjacency)
    inf_line = lines[N + 1]
    if not inf_line.startswith("infected:"):
        raise FormatError("missing infected line")
    infected = np.array([int(x) for x in inf_line[len("infected:"):].split()], dtype=np.int64)
    if len(infected) != k:
        raise FormatError(f"header says k={k} but {len(infected)} infected listed")
    outcomes = None
    if len(lines) > N + 2:
        out_line = lines[N + 2]
        if not out_line.startswith("outcomes:"):
            raise FormatError("unexpected trailing line")
        bits = out_line[len("outcomes:"):].strip()
        if len(bits) != M or set(bits) - {"0", "1"}:
            raise FormatError("outcomes must be M bits")
        outcomes = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    return ParsedInstance(design, graph, infected, outcomes)
