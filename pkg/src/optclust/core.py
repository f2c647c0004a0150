"""Point sets with missing features, label functions, partitions and the
mismatch/cost metrics used to score clusterings.

Labels on a :class:`LabelFunction` are 1-based (``1..l``).  Partition block
ids are 0-based and canonical: block ids appear in order of first occurrence,
so two label functions that differ only by a relabeling give equal
:class:`Partition` values.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "OptclustError",
    "DimensionMismatchError",
    "PointSet",
    "LabelFunction",
    "Partition",
    "MissingnessGroup",
    "decompose_groups",
    "group_statistics",
    "label_mismatch_error",
    "partition_cost",
    "clustering_error",
    "partition_hamming_distance",
    "enumerate_partitions",
    "count_partitions",
    "canonical_labels",
    "two_block_labels",
    "two_block_distance",
]

# exhaustive permutation search up to this many labels, assignment solver above
_EXHAUSTIVE_MAX_LABELS = 8


class OptclustError(ValueError):
    """Base class for invalid-input errors raised by this package."""


class DimensionMismatchError(OptclustError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointSet:
    """``n`` points in ``R^d`` with a per-point observed-feature mask.

    Missing entries are stored as NaN in :attr:`points`; ``observed[k, j]`` is
    True when feature ``j`` of point ``k`` was observed.
    """

    points: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        obs = np.array(self.observed, dtype=bool, ndmin=2)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise OptclustError(f"points must be an (n, d) array with n, d >= 1, got shape {pts.shape}")
        if obs.shape != pts.shape:
            raise DimensionMismatchError(f"mask shape {obs.shape} does not match points shape {pts.shape}")
        pts = np.where(obs, pts, np.nan)
        if not np.all(np.isfinite(pts[obs])):
            raise OptclustError("observed entries must be finite")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "observed", _readonly(obs))

    @classmethod
    def from_array(cls, X) -> "PointSet":
        """Build from an array where NaN marks a missing entry."""
        X = np.array(X, dtype=float, ndmin=2)
        return cls(X, ~np.isnan(X))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def missing_fraction(self) -> float:
        return 1.0 - self.observed.mean()

    def take(self, idx) -> "PointSet":
        idx = np.asarray(idx)
        return PointSet(self.points[idx], self.observed[idx])

    def filled(self, value: float = 0.0) -> np.ndarray:
        return np.where(self.observed, self.points, value)

    def __repr__(self):
        return f"PointSet(n={self.n}, d={self.d}, missing={self.missing_fraction:.3f})"


@dataclass(frozen=True, eq=False)
class LabelFunction:
    """Assignment of each point to a label in ``1..l``."""

    labels: np.ndarray
    l: int = 2

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64).ravel()
        if self.l < 1:
            raise OptclustError("l must be >= 1")
        if lab.size and (lab.min() < 1 or lab.max() > self.l):
            raise OptclustError(f"labels must lie in 1..{self.l}")
        object.__setattr__(self, "labels", _readonly(lab))

    @property
    def n(self) -> int:
        return self.labels.size

    def partition(self) -> "Partition":
        return Partition(self.labels, self.l)

    def __eq__(self, other):
        if not isinstance(other, LabelFunction):
            return NotImplemented
        return self.l == other.l and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.l, self.labels.tobytes()))


def canonical_labels(labels) -> np.ndarray:
    """Relabel so block ids follow order of first appearance (0-based).

    Works row-wise on 2-D input.
    """
    lab = np.asarray(labels)
    if lab.ndim == 2:
        return np.stack([canonical_labels(row) for row in lab]) if len(lab) else lab.astype(np.int64)
    _, first, inverse = np.unique(lab, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse.ravel()]


@dataclass(frozen=True)
class Partition:
    """Label-switching equivalence class of a label function.

    ``blocks[k]`` is the canonical block id of point ``k``; ``l`` bounds the
    number of nonempty blocks.
    """

    blocks: tuple
    l: int = 2

    def __post_init__(self):
        blocks = tuple(int(b) for b in canonical_labels(np.asarray(self.blocks)))
        if not blocks:
            raise OptclustError("partition of an empty set")
        if max(blocks) + 1 > self.l:
            raise OptclustError(f"partition uses {max(blocks) + 1} blocks, more than l={self.l}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return len(self.blocks)

    @property
    def n_blocks(self) -> int:
        return max(self.blocks) + 1

    def block_sizes(self) -> tuple:
        return tuple(np.bincount(self.blocks, minlength=self.n_blocks).tolist())

    def as_array(self) -> np.ndarray:
        return np.asarray(self.blocks, dtype=np.int64)

    def label_function(self) -> LabelFunction:
        """The label function assigning label ``b + 1`` to block ``b``."""
        return LabelFunction(self.as_array() + 1, self.l)

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)


@dataclass(frozen=True)
class MissingnessGroup:
    """Points of one label sharing the same set of observed features."""

    label: int
    observed_features: tuple
    member_indices: tuple
    fully_missing: bool = field(default=False)

    @property
    def n_ig(self) -> int:
        return len(self.member_indices)

    @property
    def d_ig(self) -> int:
        return len(self.observed_features)


def _check_same_n(a: int, b: int, what: str = "sizes"):
    if a != b:
        raise DimensionMismatchError(f"{what} differ: {a} != {b}")


def decompose_groups(S: PointSet, phi: LabelFunction) -> list[MissingnessGroup]:
    """Group points by (label, observed-feature set).

    Groups are ordered by label, then by first appearance of the pattern.
    Fully-missing groups are returned with ``fully_missing=True``; likelihood
    code skips them.
    """
    _check_same_n(S.n, phi.n, "point count and label count")
    keyed: dict[tuple, list[int]] = {}
    for k in range(S.n):
        key = (int(phi.labels[k]), tuple(np.flatnonzero(S.observed[k]).tolist()))
        keyed.setdefault(key, []).append(k)
    groups = [
        MissingnessGroup(label, feats, tuple(members), fully_missing=not feats)
        for (label, feats), members in keyed.items()
    ]
    groups.sort(key=lambda g: g.label)
    return groups


def group_statistics(g: MissingnessGroup, S: PointSet) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and scatter matrix of a group's observed coordinates."""
    if g.n_ig == 0:
        raise OptclustError("empty missingness group")
    if g.d_ig == 0:
        raise OptclustError("group has no observed features")
    Y = S.points[np.ix_(g.member_indices, g.observed_features)]
    mean = Y.mean(axis=0)
    centered = Y - mean
    scatter = centered.T @ centered
    return mean, 0.5 * (scatter + scatter.T)


def label_mismatch_error(phi_true: LabelFunction, phi_pred: LabelFunction) -> float:
    """Fraction of points whose raw labels differ (no relabeling)."""
    _check_same_n(phi_true.n, phi_pred.n, "label vector lengths")
    return float(np.mean(phi_true.labels != phi_pred.labels))


def _confusion(a: np.ndarray, b: np.ndarray, size: int) -> np.ndarray:
    C = np.zeros((size, size), dtype=np.int64)
    np.add.at(C, (a, b), 1)
    return C


def _max_matching(C: np.ndarray) -> int:
    size = C.shape[0]
    if size <= _EXHAUSTIVE_MAX_LABELS:
        idx = np.arange(size)
        return max(int(C[idx, perm].sum()) for perm in itertools.permutations(range(size)))
    rows, cols = linear_sum_assignment(C, maximize=True)
    return int(C[rows, cols].sum())


def _mismatch_count(Q: Partition, P: Partition) -> int:
    _check_same_n(Q.n, P.n, "partition sizes")
    size = max(Q.l, P.l, Q.n_blocks, P.n_blocks)
    C = _confusion(Q.as_array(), P.as_array(), size)
    return Q.n - _max_matching(C)


def partition_cost(Q: Partition, P: Partition) -> float:
    """Minimum fraction of mismatched points over relabelings of ``Q``."""
    if Q.l != P.l:
        raise DimensionMismatchError(f"partitions allow different label counts: {Q.l} != {P.l}")
    return _mismatch_count(Q, P) / Q.n


def clustering_error(phi_true: LabelFunction, P_pred: Partition) -> float:
    """Cluster mismatch error of a predicted partition against true labels."""
    _check_same_n(phi_true.n, P_pred.n, "label count and partition size")
    l = max(phi_true.l, P_pred.l)
    truth = Partition(phi_true.labels, l)
    pred = P_pred if P_pred.l == l else Partition(P_pred.blocks, l)
    return partition_cost(pred, truth)


def partition_hamming_distance(P: Partition, Q: Partition) -> int:
    """Minimum Hamming distance between label functions inducing P and Q."""
    return _mismatch_count(P, Q)


def _rgs(n: int, l: int, sizes: tuple | None) -> Iterator[tuple]:
    """Restricted growth strings of length n with at most l blocks, lex order."""
    a = [0] * n
    counts = [0] * l
    target = None if sizes is None else sorted(sizes, reverse=True)

    def feasible(used: int) -> bool:
        # used blocks must fit distinct target sizes; largest-to-largest is optimal
        if target is None:
            return True
        if used > len(target):
            return False
        current = sorted(counts[:used], reverse=True)
        return all(c <= t for c, t in zip(current, target))

    def rec(k: int, used: int):
        if k == n:
            if target is None or sorted(counts[:used] + [0] * (len(target) - used), reverse=True) == target:
                yield tuple(a)
            return
        for b in range(min(used + 1, l)):
            a[k] = b
            counts[b] += 1
            nu = max(used, b + 1)
            if feasible(nu):
                yield from rec(k + 1, nu)
            counts[b] -= 1

    if n == 0:
        return
    a[0] = 0
    counts[0] = 1
    if feasible(1):
        yield from rec(1, 1)


def _check_enum_args(n: int, l: int, size_constraint):
    if n < 1:
        raise OptclustError("n must be >= 1")
    if l < 2:
        raise OptclustError("l must be >= 2")
    if size_constraint is not None:
        sizes = tuple(int(s) for s in size_constraint)
        if sum(sizes) != n:
            raise OptclustError(f"size constraint {sizes} does not sum to n={n}")
        if any(s < 0 for s in sizes):
            raise OptclustError("block sizes must be nonnegative")
        sizes = tuple(s for s in sizes if s > 0)
        if len(sizes) > l:
            raise OptclustError(f"size constraint has more than l={l} nonempty blocks")
        return sizes
    return None


def enumerate_partitions(n: int, l: int = 2, size_constraint: Sequence[int] | None = None) -> Iterator[Partition]:
    """Stream every partition of ``n`` points into at most ``l`` blocks once.

    Partitions come in lexicographic order of their canonical block vectors.
    With ``size_constraint`` only partitions whose block sizes match the given
    multiset are produced.
    """
    sizes = _check_enum_args(n, l, size_constraint)
    for rgs in _rgs(n, l, sizes):
        yield Partition(rgs, l)


def count_partitions(n: int, l: int = 2, size_constraint: Sequence[int] | None = None) -> int:
    """Closed-form count of :func:`enumerate_partitions` output."""
    sizes = _check_enum_args(n, l, size_constraint)
    if sizes is None:
        # sum of Stirling numbers of the second kind S(n, k), k <= l
        return sum(_stirling2(n, k) for k in range(1, l + 1))
    count = math.factorial(n)
    for s in sizes:
        count //= math.factorial(s)
    for mult in np.unique(sizes, return_counts=True)[1]:
        count //= math.factorial(int(mult))
    return count


def _stirling2(n: int, k: int) -> int:
    return sum((-1) ** j * math.comb(k, j) * (k - j) ** n for j in range(k + 1)) // math.factorial(k)


def two_block_labels(n: int, sizes: Sequence[int] | None = None) -> np.ndarray:
    """All canonical partitions into at most two blocks as a (R, n) uint8 array.

    Rows are in canonical enumeration order (same as :func:`enumerate_partitions`
    with ``l=2``).  Point 0 is always in block 0.
    """
    if n < 1:
        raise OptclustError("n must be >= 1")
    if n > 26:
        raise OptclustError(f"refusing to materialize 2^{n - 1} partitions")
    codes = np.arange(1 << (n - 1), dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    labels = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    if sizes is not None:
        sizes = _check_enum_args(n, 2, sizes)
        ones = labels.sum(axis=1, dtype=np.int64)
        if len(sizes) == 1:
            keep = ones == 0
        else:
            keep = (ones == sizes[0]) | (ones == sizes[1])
        labels = labels[keep]
    return labels


def two_block_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Partition Hamming distance between 0/1 label rows, broadcasting."""
    a = np.asarray(a)
    n = a.shape[-1]
    h = np.count_nonzero(a != np.asarray(b), axis=-1)
    return np.minimum(h, n - h)
