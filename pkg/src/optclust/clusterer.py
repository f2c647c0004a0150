"""Bayes cluster operator and the Pmax / Pseed suboptimal searches.

The Bayes partition minimizes the posterior-expected partition cost over a
candidate set, where the expectation runs over a set of reference partitions
carrying normalized posterior mass.

For two-block partitions the cost between label rows ``q`` and ``p`` depends
only on ``q xor p``, so the objective over *all* ``2^n`` label rows is a
dyadic convolution of the reference weights with ``min(h, n - h)``; it is
computed with three Walsh-Hadamard transforms instead of a
candidates-by-references double loop.  Near-minimal candidates are then
re-scored directly so ties resolve exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import kernels
from .core import (
    OptclustError,
    Partition,
    PointSet,
    partition_cost,
    two_block_distance,
    two_block_labels,
)
from .posterior import DEFAULT_MC_SAMPLES, ModelSpec, PartitionScorer, PosteriorTable

__all__ = [
    "InfeasibleSizeError",
    "SearchConfig",
    "SearchResult",
    "ClusteringContext",
    "bayes_cluster",
    "expected_costs",
    "optimal_cluster",
    "pmax_cluster",
    "pseed_cluster",
    "search",
    "hamming_ball",
    "MAX_EXHAUSTIVE_N",
]

# largest n for which 2^(n-1) candidates are scanned without --force
MAX_EXHAUSTIVE_N = 22
# candidates within this distance of the transform minimum are re-scored directly
_WHT_RESCORE_WINDOW = 1e-8
_MAX_BALL = 5_000_000


class InfeasibleSizeError(OptclustError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    """Settings for one of the three posterior-based searches.

    ``neighborhood`` selects the Pseed local moves: ``"swap"`` exchanges two
    points across blocks (keeps block sizes), ``"flip"`` relabels one point.
    """

    mode: str = "optimal"
    hamming_radius: int = 1
    n_seeds: int = 5
    size_constraint: tuple | None = None
    seed: int | None = None
    neighborhood: str = "swap"
    mc_samples: int = DEFAULT_MC_SAMPLES
    force: bool = False

    def __post_init__(self):
        if self.mode not in ("optimal", "pmax", "pseed"):
            raise OptclustError(f"unknown search mode {self.mode!r}")
        if self.hamming_radius < 0:
            raise OptclustError("hamming_radius must be nonnegative")
        if self.n_seeds < 1:
            raise OptclustError("n_seeds must be >= 1")
        if self.neighborhood not in ("swap", "flip"):
            raise OptclustError(f"unknown neighborhood {self.neighborhood!r}")
        if self.size_constraint is not None:
            object.__setattr__(self, "size_constraint", tuple(int(s) for s in self.size_constraint))


@dataclass(frozen=True)
class SearchResult:
    partition: Partition
    expected_error: float
    table: PosteriorTable | None = None
    center: Partition | None = None
    n_candidates: int = 0


def _as_label_rows(parts, n: int | None = None) -> np.ndarray:
    if isinstance(parts, np.ndarray):
        return np.atleast_2d(parts)
    rows = [p.blocks if isinstance(p, Partition) else tuple(p) for p in parts]
    if not rows:
        raise OptclustError("empty candidate set")
    return np.array(rows, dtype=np.int64)


def _canon2(rows: np.ndarray) -> np.ndarray:
    """Canonicalize 0/1 rows: point 0 always in block 0."""
    rows = np.asarray(rows, dtype=np.uint8)
    return np.where(rows[:, :1] == 1, 1 - rows, rows).astype(np.uint8)


def _canonical_order(rows: np.ndarray) -> np.ndarray:
    """Row indices sorted lexicographically (canonical enumeration order)."""
    return np.lexsort(rows.T[::-1])


def expected_costs(candidates, table: PosteriorTable) -> np.ndarray:
    """Posterior-expected partition cost of every candidate."""
    cand = _as_label_rows(candidates)
    ref = table.labels()
    if cand.shape[1] != ref.shape[1]:
        raise OptclustError("candidate and reference partitions have different sizes")
    if cand.max() <= 1 and ref.max() <= 1:
        n = cand.shape[1]
        return kernels.cost_sums(kernels.pack_labels(cand), kernels.pack_labels(ref), table.probabilities, n)
    l = table.l
    return np.array([
        sum(w * partition_cost(Partition(c, l), P) for P, w in zip(table.partitions, table.probabilities))
        for c in cand
    ])


def bayes_cluster(candidates, table: PosteriorTable) -> tuple[Partition, float]:
    """Candidate minimizing the expected cost under ``table``.

    Ties go to the earliest candidate in the given order.
    """
    cand = _as_label_rows(candidates)
    if cand.shape[0] == 0:
        raise OptclustError("empty candidate set")
    ref = table.labels()
    l = table.l
    n = ref.shape[1]
    if cand.shape[1] != n:
        raise OptclustError("candidate and reference partitions have different sizes")
    if cand.max() <= 1 and ref.max() <= 1:
        idx, val = kernels.argmin_cost(kernels.pack_labels(cand), kernels.pack_labels(ref), table.probabilities, n)
        return Partition(cand[idx], l), float(val)
    best_i, best = -1, math.inf
    for i, c in enumerate(cand):
        Q = Partition(c, l)
        acc = 0.0
        for P, w in zip(table.partitions, table.probabilities):
            acc += w * partition_cost(Q, P)
            if acc > best + kernels.TIE_TOL:
                break
        else:
            if acc < best - kernels.TIE_TOL:
                best_i, best = i, acc
    return Partition(cand[best_i], l), float(best)


def _codes(rows: np.ndarray) -> np.ndarray:
    n = rows.shape[1]
    weights = np.left_shift(np.int64(1), np.arange(n - 1, -1, -1, dtype=np.int64))
    return rows.astype(np.int64) @ weights


def _all_candidates_objective(ref: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Expected cost of every canonical two-block partition (indexed by code)."""
    n = ref.shape[1]
    N = 1 << n
    weights = np.zeros(N)
    np.add.at(weights, _codes(ref), w)
    pop = np.bitwise_count(np.arange(N, dtype=np.uint64)).astype(np.float64)
    cost = np.minimum(pop, n - pop)
    g = kernels.fwht(kernels.fwht(weights) * kernels.fwht(cost)) / (N * n)
    return g[: N >> 1]


def _bayes_all_two_block(table: PosteriorTable, n: int) -> tuple[Partition, float]:
    ref = table.labels()
    w = table.probabilities
    g = _all_candidates_objective(ref, w)
    near = np.flatnonzero(g <= g.min() + _WHT_RESCORE_WINDOW)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    rows = ((near[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return bayes_cluster(rows, table)


def _ball_two_block(center: np.ndarray, radius: int, sizes: tuple | None, neighborhood: str) -> np.ndarray:
    n = center.size
    A = np.flatnonzero(center == 0)
    B = np.flatnonzero(center == 1)
    rows = []
    total = 0
    if sizes is not None and neighborhood == "swap" and sorted((A.size, B.size)) == sorted(sizes):
        for k in range(min(A.size, B.size) + 1):
            if min(2 * k, n - 2 * k) > radius:
                continue
            total += math.comb(A.size, k) * math.comb(B.size, k)
            if total > _MAX_BALL:
                raise InfeasibleSizeError(f"Hamming ball of radius {radius} exceeds {_MAX_BALL} partitions")
            for a in itertools.combinations(A, k):
                for b in itertools.combinations(B, k):
                    row = center.copy()
                    row[list(a)] = 1
                    row[list(b)] = 0
                    rows.append(row)
    else:
        for k in range(n + 1):
            if min(k, n - k) > radius:
                continue
            total += math.comb(n, k)
            if total > _MAX_BALL:
                raise InfeasibleSizeError(f"Hamming ball of radius {radius} exceeds {_MAX_BALL} partitions")
            for flip in itertools.combinations(range(n), k):
                row = center.copy()
                row[list(flip)] ^= 1
                rows.append(row)
    out = _canon2(np.array(rows, dtype=np.uint8))
    out = np.unique(out, axis=0)
    if sizes is not None:
        ones = out.sum(axis=1)
        target = sorted(sizes) if len(sizes) == 2 else [0, n]
        keep = (ones == target[0]) | (ones == target[1])
        if keep.any():
            out = out[keep]
    return out[_canonical_order(out)]


def hamming_ball(center: Partition, radius: int, size_constraint: Sequence[int] | None = None) -> list[Partition]:
    """Two-block partitions within ``radius`` of ``center`` (size-filtered)."""
    c = np.asarray(center.blocks, dtype=np.uint8)
    sizes = None if size_constraint is None else tuple(int(s) for s in size_constraint)
    return [Partition(r, 2) for r in _ball_two_block(c, radius, sizes, "swap" if sizes else "flip")]


class ClusteringContext:
    """Shared state for the posterior-based searches on one point set.

    Holds the :class:`PartitionScorer` (and with it the Monte Carlo draws for
    GIW models) and caches the posterior over the full size-constrained
    partition set, so Optimal and Pmax on the same instance score it once.
    """

    def __init__(self, S: PointSet, model: ModelSpec, size_constraint=None, mc_samples=DEFAULT_MC_SAMPLES, rng=None, scorer=None):
        if model.l != 2:
            raise OptclustError("the partition searches support l = 2")
        self.S = S
        self.model = model
        self.n = S.n
        self.sizes = None if size_constraint is None else tuple(int(s) for s in size_constraint)
        if self.sizes is not None and sum(self.sizes) != self.n:
            raise OptclustError(f"size constraint {self.sizes} does not sum to n={self.n}")
        self.scorer = scorer if scorer is not None else PartitionScorer(S, model, mc_samples, rng)
        self._constrained = None

    def _guard(self, force: bool):
        if self.n > MAX_EXHAUSTIVE_N and not force:
            raise InfeasibleSizeError(
                f"exhaustive search over 2^{self.n - 1} partitions refused for n={self.n} > {MAX_EXHAUSTIVE_N}; use force"
            )

    def constrained_scores(self, force: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """All size-constrained partitions and their log posteriors."""
        self._guard(force)
        if self._constrained is None:
            rows = two_block_labels(self.n, self.sizes)
            self._constrained = (rows, self.scorer.partition_scores(rows))
        return self._constrained

    def _table(self, rows: np.ndarray, logv: np.ndarray) -> PosteriorTable:
        return PosteriorTable.from_log_values(rows, logv, 2)

    def optimal(self, force: bool = False) -> SearchResult:
        rows, logv = self.constrained_scores(force)
        table = self._table(rows, logv)
        part, val = _bayes_all_two_block(table, self.n)
        return SearchResult(part, val, table, None, 1 << (self.n - 1))

    def pmax(self, radius: int, force: bool = False) -> SearchResult:
        rows, logv = self.constrained_scores(force)
        center = rows[int(np.argmax(logv))]
        keep = two_block_distance(rows, center) <= radius
        table = self._table(rows[keep], logv[keep])
        part, val = _bayes_all_two_block(table, self.n)
        return SearchResult(part, val, table, Partition(center, 2), 1 << (self.n - 1))

    def _neighbors(self, row: np.ndarray, neighborhood: str) -> np.ndarray:
        if neighborhood == "swap":
            A = np.flatnonzero(row == 0)
            B = np.flatnonzero(row == 1)
            if A.size == 0 or B.size == 0:
                return np.empty((0, row.size), dtype=np.uint8)
            ai, bi = np.meshgrid(A, B, indexing="ij")
            ai, bi = ai.ravel(), bi.ravel()
            nb = np.repeat(row[None, :], ai.size, axis=0)
            idx = np.arange(ai.size)
            nb[idx, ai] = 1
            nb[idx, bi] = 0
        else:
            nb = np.repeat(row[None, :], row.size, axis=0)
            nb[np.arange(row.size), np.arange(row.size)] ^= 1
        return _canon2(nb)

    def hill_climb(self, start: np.ndarray, neighborhood: str = "swap") -> tuple[np.ndarray, float]:
        """Steepest ascent on the partition posterior until no neighbor improves."""
        row = _canon2(start[None, :])[0]
        score = float(self.scorer.partition_scores(row[None, :])[0])
        while True:
            nb = self._neighbors(row, neighborhood)
            if nb.shape[0] == 0:
                return row, score
            vals = self.scorer.partition_scores(nb)
            j = int(np.argmax(vals))
            if not vals[j] > score:
                return row, score
            row, score = nb[j], float(vals[j])

    def pseed(self, radius: int, n_seeds: int = 5, rng=None, neighborhood: str = "swap", starts=None) -> SearchResult:
        rng = np.random.default_rng() if rng is None else rng
        if neighborhood == "swap" and self.sizes is None:
            neighborhood = "flip"
        if starts is None:
            from .baselines import random_cluster

            sizes = self.sizes if self.sizes is not None else (self.n - self.n // 2, self.n // 2)
            starts = [np.asarray(random_cluster(self.n, sizes, rng).blocks, dtype=np.uint8) for _ in range(n_seeds)]
        best_row, best_score = None, -math.inf
        for s in starts:
            row, score = self.hill_climb(np.asarray(s, dtype=np.uint8), neighborhood)
            if score > best_score:
                best_row, best_score = row, score
        ball = _ball_two_block(best_row, radius, self.sizes, neighborhood)
        table = self._table(ball, self.scorer.partition_scores(ball))
        part, val = bayes_cluster(ball, table)
        return SearchResult(part, val, table, Partition(best_row, 2), ball.shape[0])


def search(S: PointSet, model: ModelSpec, config: SearchConfig, context: ClusteringContext | None = None) -> SearchResult:
    """Run the search selected by ``config.mode``."""
    rng = np.random.default_rng(config.seed)
    if context is None:
        context = ClusteringContext(S, model, config.size_constraint, config.mc_samples, rng)
    if config.mode == "optimal":
        return context.optimal(config.force)
    if config.mode == "pmax":
        return context.pmax(config.hamming_radius, config.force)
    return context.pseed(config.hamming_radius, config.n_seeds, rng, config.neighborhood)


def optimal_cluster(S: PointSet, model: ModelSpec, size_constraint=None, mc_samples: int = DEFAULT_MC_SAMPLES, rng=None, force: bool = False) -> Partition:
    """Bayes partition with all two-block candidates and the size-constrained
    reference set (all partitions when ``size_constraint`` is None)."""
    ctx = ClusteringContext(S, model, size_constraint, mc_samples, rng)
    return ctx.optimal(force).partition


def pmax_cluster(S: PointSet, model: ModelSpec, config: SearchConfig) -> Partition:
    """Bayes partition with references restricted to a Hamming ball around
    the maximum-posterior size-constrained partition."""
    return search(S, model, replace(config, mode="pmax")).partition


def pseed_cluster(S: PointSet, model: ModelSpec, config: SearchConfig) -> Partition:
    """Multi-start hill climbing for the ball center, then the Bayes partition
    with references and candidates inside the ball."""
    return search(S, model, replace(config, mode="pseed")).partition
