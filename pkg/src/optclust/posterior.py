"""Posterior probabilities of label functions and partitions under three
Gaussian labeled-point models with MCAR missing features.

Models
------
FixedModel
    Known per-label means and covariances.
GaussianMeanModel
    ``mu_i ~ N(m_i, Sigma_i / nu_i)`` with known ``Sigma_i``.
GIWModel
    ``mu_i | Sigma_i ~ N(m_i, Sigma_i / nu_i)``, ``Sigma_i ~ IW(kappa_i, Psi_i)``;
    the covariance integral is estimated by Monte Carlo.

Everything is accumulated in the log domain.  Two routes exist: the
``log_posterior_*`` functions follow the grouped (label x missingness
pattern) formulation directly and are meant for single label functions;
:class:`PartitionScorer` reduces each point to additive sufficient statistics
and scores many partitions at once through :mod:`optclust.kernels`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .core import (
    DimensionMismatchError,
    LabelFunction,
    OptclustError,
    Partition,
    PointSet,
    decompose_groups,
    group_statistics,
)

__all__ = [
    "SingularMatrixError",
    "ModelSpec",
    "FixedModel",
    "GaussianMeanModel",
    "GIWModel",
    "DEFAULT_MC_SAMPLES",
    "sample_inverse_wishart",
    "log_posterior_fixed",
    "log_posterior_gaussian_mean",
    "log_posterior_giw",
    "log_posterior",
    "PosteriorTable",
    "PartitionScorer",
    "posterior_table",
]

DEFAULT_MC_SAMPLES = 500
LOG_2PI = math.log(2.0 * math.pi)
_JITTER = 1e-9


class SingularMatrixError(OptclustError):
    pass


def _chol(M: np.ndarray, what: str) -> np.ndarray:
    """Cholesky factor; one retry with trace-scaled jitter."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    d = M.shape[0]
    try:
        return np.linalg.cholesky(M + _JITTER * np.trace(M) / d * np.eye(d))
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"{what} is not positive definite") from None


def _inv_logdet(M: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    L = _chol(M, what)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv, 2.0 * float(np.log(np.diag(L)).sum())


def _as_stack(a, l: int, d: int, name: str, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    want = (l, d) if ndim == 1 else (l, d, d)
    if arr.shape == want[1:]:
        arr = np.broadcast_to(arr, want).copy()
    if arr.shape != want:
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {want}")
    arr.setflags(write=False)
    return arr


def _as_vec(a, l: int, name: str) -> np.ndarray:
    arr = np.array(np.broadcast_to(np.asarray(a, dtype=float), (l,)))
    arr.setflags(write=False)
    return arr


def _check_spd(M: np.ndarray, name: str):
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise OptclustError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise OptclustError(f"{name} is not positive definite") from None


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Common part of the three generative models.

    ``label_weights`` gives i.i.d. prior label probabilities, so that
    ``P(phi) = prod_x w[phi(x)]``; ``None`` means uniform over all ``l**n``
    label functions.
    """

    label_weights: np.ndarray | None = field(default=None, kw_only=True)

    variant = "base"

    @property
    def l(self) -> int:
        raise NotImplementedError

    @property
    def d(self) -> int:
        raise NotImplementedError

    def log_label_weights(self) -> np.ndarray:
        if self.label_weights is None:
            return np.full(self.l, -math.log(self.l))
        w = np.asarray(self.label_weights, dtype=float)
        if w.shape != (self.l,) or np.any(w <= 0):
            raise OptclustError("label_weights must be l positive numbers")
        return np.log(w / w.sum())

    def log_label_prior(self, phi: LabelFunction) -> float:
        return float(self.log_label_weights()[phi.labels - 1].sum())

    def _validate_weights(self):
        if self.label_weights is not None:
            self.log_label_weights()


@dataclass(frozen=True, eq=False)
class FixedModel(ModelSpec):
    means: np.ndarray
    covs: np.ndarray

    variant = "fixed"

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        l, d = means.shape
        object.__setattr__(self, "means", _as_stack(means, l, d, "means", 1))
        object.__setattr__(self, "covs", _as_stack(self.covs, l, d, "covs", 2))
        for i in range(l):
            _check_spd(self.covs[i], f"covariance of label {i + 1}")
        self._validate_weights()

    @property
    def l(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True, eq=False)
class GaussianMeanModel(ModelSpec):
    prior_means: np.ndarray
    nus: np.ndarray
    covs: np.ndarray

    variant = "gaussian_mean"

    def __post_init__(self):
        pm = np.atleast_2d(np.asarray(self.prior_means, dtype=float))
        l, d = pm.shape
        object.__setattr__(self, "prior_means", _as_stack(pm, l, d, "prior_means", 1))
        object.__setattr__(self, "nus", _as_vec(self.nus, l, "nus"))
        object.__setattr__(self, "covs", _as_stack(self.covs, l, d, "covs", 2))
        if np.any(self.nus <= 0):
            raise OptclustError("nu must be positive")
        for i in range(l):
            _check_spd(self.covs[i], f"covariance of label {i + 1}")
        self._validate_weights()

    @property
    def l(self) -> int:
        return self.prior_means.shape[0]

    @property
    def d(self) -> int:
        return self.prior_means.shape[1]


@dataclass(frozen=True, eq=False)
class GIWModel(ModelSpec):
    prior_means: np.ndarray
    nus: np.ndarray
    kappas: np.ndarray
    scales: np.ndarray

    variant = "giw"

    def __post_init__(self):
        pm = np.atleast_2d(np.asarray(self.prior_means, dtype=float))
        l, d = pm.shape
        object.__setattr__(self, "prior_means", _as_stack(pm, l, d, "prior_means", 1))
        object.__setattr__(self, "nus", _as_vec(self.nus, l, "nus"))
        object.__setattr__(self, "kappas", _as_vec(self.kappas, l, "kappas"))
        object.__setattr__(self, "scales", _as_stack(self.scales, l, d, "scales", 2))
        if np.any(self.nus <= 0):
            raise OptclustError("nu must be positive")
        if np.any(self.kappas <= d - 1):
            raise OptclustError(f"kappa must exceed d - 1 = {d - 1}")
        for i in range(l):
            _check_spd(self.scales[i], f"scale matrix of label {i + 1}")
        self._validate_weights()

    @property
    def l(self) -> int:
        return self.prior_means.shape[0]

    @property
    def d(self) -> int:
        return self.prior_means.shape[1]

    def conditional(self, covs: np.ndarray) -> GaussianMeanModel:
        """The Gaussian-mean model obtained by fixing the covariances."""
        return GaussianMeanModel(self.prior_means, self.nus, covs, label_weights=self.label_weights)


def sample_inverse_wishart(kappa: float, Psi, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from IW(kappa, Psi) by inverting a Bartlett-factored Wishart draw.

    With ``Psi = C C'`` and a Bartlett factor ``A`` of a W(kappa, I) draw, the
    Wishart draw with scale ``Psi^{-1}`` is ``C^{-T} A A' C^{-1}``; its inverse
    is ``B B'`` with ``B = C A^{-T}``.
    """
    Psi = np.asarray(Psi, dtype=float)
    if Psi.ndim != 2 or Psi.shape[0] != Psi.shape[1]:
        raise OptclustError("Psi must be a square matrix")
    d = Psi.shape[0]
    if not kappa > d - 1:
        raise OptclustError(f"kappa={kappa} must exceed d - 1 = {d - 1}")
    _check_spd(Psi, "Psi")
    C = np.linalg.cholesky(Psi)
    m = 1 if size is None else int(size)
    A = np.zeros((m, d, d))
    diag = np.sqrt(rng.chisquare(kappa - np.arange(d), size=(m, d)))
    A[:, np.arange(d), np.arange(d)] = diag
    rows, cols = np.tril_indices(d, -1)
    A[:, rows, cols] = rng.standard_normal((m, rows.size))
    Ainv = np.linalg.inv(A)
    B = C @ np.swapaxes(Ainv, 1, 2)
    out = B @ np.swapaxes(B, 1, 2)
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return out[0] if size is None else out


def _check_inputs(S: PointSet, phi: LabelFunction, model: ModelSpec):
    if S.n != phi.n:
        raise DimensionMismatchError(f"point set has {S.n} points but label function has {phi.n}")
    if S.d != model.d:
        raise DimensionMismatchError(f"point set dimension {S.d} != model dimension {model.d}")
    if phi.l > model.l:
        raise DimensionMismatchError(f"label function uses l={phi.l} labels, model has {model.l}")


def _observed_groups(S: PointSet, phi: LabelFunction):
    by_label: dict[int, list] = {}
    for g in decompose_groups(S, phi):
        if g.fully_missing:
            continue
        m, psi = group_statistics(g, S)
        by_label.setdefault(g.label, []).append((g, m, psi))
    return by_label


def log_posterior_fixed(S: PointSet, phi: LabelFunction, model: FixedModel) -> float:
    """Log unnormalized posterior of ``phi`` with known means and covariances."""
    _check_inputs(S, phi, model)
    total = model.log_label_prior(phi)
    for label, groups in _observed_groups(S, phi).items():
        mu, Sigma = model.means[label - 1], model.covs[label - 1]
        for g, m, psi in groups:
            J = list(g.observed_features)
            prec, logdet = _inv_logdet(Sigma[np.ix_(J, J)], f"covariance block of label {label}, features {J}")
            diff = m - mu[J]
            total += -0.5 * g.n_ig * (g.d_ig * LOG_2PI + logdet)
            total += -0.5 * np.sum(psi * prec)
            total += -0.5 * g.n_ig * diff @ prec @ diff
    return float(total)


def _gaussian_mean_label(groups, d: int, m0: np.ndarray, nu: float, Sigma: np.ndarray, label: int) -> float:
    """One label's factor after integrating out its mean (log domain)."""
    Sprec, Slogdet = _inv_logdet(Sigma, f"covariance of label {label}")
    A = nu * Sprec
    b = nu * Sprec @ m0
    quad = nu * m0 @ Sprec @ m0
    total = 0.0
    for g, m, psi in groups:
        J = list(g.observed_features)
        prec, logdet = _inv_logdet(Sigma[np.ix_(J, J)], f"covariance block of label {label}, features {J}")
        total += -0.5 * g.n_ig * (g.d_ig * LOG_2PI + logdet)
        total += -0.5 * np.sum(psi * prec)
        A[np.ix_(J, J)] += g.n_ig * prec
        b[J] += g.n_ig * prec @ m
        quad += g.n_ig * m @ prec @ m
    Ainv, Alogdet = _inv_logdet(A, f"posterior precision of label {label}")
    total += 0.5 * d * math.log(nu) - 0.5 * (d * LOG_2PI + Slogdet)
    total += -0.5 * (Alogdet - d * LOG_2PI)
    total += -0.5 * (quad - b @ Ainv @ b)
    return float(total)


def log_posterior_gaussian_mean(S: PointSet, phi: LabelFunction, model: GaussianMeanModel) -> float:
    """Log unnormalized posterior of ``phi`` with Gaussian means, known covariances."""
    _check_inputs(S, phi, model)
    total = model.log_label_prior(phi)
    for label, groups in _observed_groups(S, phi).items():
        i = label - 1
        total += _gaussian_mean_label(groups, model.d, model.prior_means[i], model.nus[i], model.covs[i], label)
    return float(total)


def log_posterior_giw(
    S: PointSet,
    phi: LabelFunction,
    model: GIWModel,
    J: int = DEFAULT_MC_SAMPLES,
    rng: np.random.Generator | None = None,
) -> float:
    """Monte Carlo log posterior of ``phi`` under the Gaussian-inverse-Wishart model.

    For every label, ``J`` covariances are drawn from its inverse-Wishart
    prior (labels in order, even unused ones, so a seed fixes all draws) and
    the per-label integral is the average of the Gaussian-mean factor over
    the draws, taken with log-sum-exp.
    """
    _check_inputs(S, phi, model)
    if J < 1:
        raise OptclustError("J must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    draws = [sample_inverse_wishart(model.kappas[i], model.scales[i], rng, size=J) for i in range(model.l)]
    total = model.log_label_prior(phi)
    for label, groups in _observed_groups(S, phi).items():
        i = label - 1
        vals = np.empty(J)
        for j in range(J):
            try:
                vals[j] = _gaussian_mean_label(groups, model.d, model.prior_means[i], model.nus[i], draws[i][j], label)
            except SingularMatrixError:
                vals[j] = -np.inf
        if not np.any(np.isfinite(vals)):
            raise OptclustError(f"all {J} Monte Carlo draws gave a non-finite integrand for label {label}")
        total += logsumexp(vals) - math.log(J)
    return float(total)


def log_posterior(S: PointSet, phi: LabelFunction, model: ModelSpec, mc_samples: int = DEFAULT_MC_SAMPLES, rng=None) -> float:
    """Dispatch to the grouped log posterior of ``model``'s variant."""
    if isinstance(model, FixedModel):
        return log_posterior_fixed(S, phi, model)
    if isinstance(model, GaussianMeanModel):
        return log_posterior_gaussian_mean(S, phi, model)
    if isinstance(model, GIWModel):
        return log_posterior_giw(S, phi, model, mc_samples, rng)
    raise TypeError(f"unsupported model {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """Reference partitions with log unnormalized and normalized posteriors.

    ``blocks`` holds the canonical block-id rows; :attr:`partitions` builds
    the corresponding :class:`Partition` objects on first access.
    """

    blocks: np.ndarray
    l: int
    log_unnormalized: np.ndarray
    probabilities: np.ndarray
    normalizer: float

    @classmethod
    def from_log_values(cls, reference, log_values, l: int = 2) -> "PosteriorTable":
        """Normalize ``log_values`` over ``reference`` (partitions or block rows)."""
        if isinstance(reference, np.ndarray):
            blocks = np.atleast_2d(reference).astype(np.int64)
        else:
            reference = list(reference)
            if reference and isinstance(reference[0], Partition):
                l = reference[0].l
            blocks = np.array([tuple(P) for P in reference], dtype=np.int64)
        logv = np.array(log_values, dtype=float)
        if blocks.shape[0] == 0:
            raise OptclustError("empty reference set")
        if blocks.shape[0] != logv.shape[0]:
            raise DimensionMismatchError("one log value per reference partition is required")
        if not np.any(np.isfinite(logv)):
            raise OptclustError("no reference partition has finite posterior")
        z = float(logsumexp(logv))
        probs = np.exp(logv - z)
        probs /= probs.sum()
        for a in (blocks, logv, probs):
            a.setflags(write=False)
        return cls(blocks, l, logv, probs, z)

    @cached_property
    def partitions(self) -> tuple:
        return tuple(Partition(row, self.l) for row in self.blocks)

    @property
    def entries(self):
        return list(zip(self.partitions, self.log_unnormalized.tolist(), self.probabilities.tolist()))

    def __len__(self):
        return self.blocks.shape[0]

    def labels(self) -> np.ndarray:
        """Reference partitions as an (R, n) block-id array."""
        return self.blocks

    def argmax(self) -> Partition:
        return Partition(self.blocks[int(np.argmax(self.log_unnormalized))], self.l)


class PartitionScorer:
    """Batched log posteriors of partitions for one point set and model.

    Per-point sufficient statistics are computed once per label (and per
    covariance draw for :class:`GIWModel`).  For the GIW model the draws are
    taken at construction and shared by every evaluation, so all partitions
    scored by one scorer see common random numbers.
    """

    def __init__(self, S: PointSet, model: ModelSpec, mc_samples: int = DEFAULT_MC_SAMPLES, rng=None):
        if S.d != model.d:
            raise DimensionMismatchError(f"point set dimension {S.d} != model dimension {model.d}")
        self.S = S
        self.model = model
        self.n = S.n
        self.l = model.l
        self._logw = model.log_label_weights()
        self._patterns, self._pattern_of = np.unique(S.observed, axis=0, return_inverse=True)
        self._pattern_of = self._pattern_of.ravel()
        self._rows = [np.flatnonzero(self._pattern_of == g) for g in range(len(self._patterns))]
        if isinstance(model, FixedModel):
            self._stats = [[self._fixed_stats(i)] for i in range(self.l)]
        elif isinstance(model, GaussianMeanModel):
            self._stats = [[self._gm_stats(model.prior_means[i], model.nus[i], model.covs[i], i + 1)] for i in range(self.l)]
        elif isinstance(model, GIWModel):
            if mc_samples < 1:
                raise OptclustError("mc_samples must be >= 1")
            rng = np.random.default_rng() if rng is None else rng
            self.draws = [sample_inverse_wishart(model.kappas[i], model.scales[i], rng, size=mc_samples) for i in range(self.l)]
            self._stats = [self._gm_stats_batch(model.prior_means[i], model.nus[i], self.draws[i], i + 1) for i in range(self.l)]
        else:
            raise TypeError(f"unsupported model {type(model).__name__}")

    def _pattern_blocks(self, Sigma: np.ndarray, label: int, strict: bool = True):
        out = []
        for pat in self._patterns:
            J = np.flatnonzero(pat)
            if J.size == 0:
                out.append(None)
                continue
            try:
                out.append((J,) + _inv_logdet(Sigma[np.ix_(J, J)], f"covariance block of label {label}, features {J.tolist()}"))
            except SingularMatrixError:
                if strict:
                    raise
                return None
        return out

    def _fixed_stats(self, i: int):
        mu, Sigma = self.model.means[i], self.model.covs[i]
        blocks = self._pattern_blocks(Sigma, i + 1)
        c = np.zeros(self.n)
        for g, blk in enumerate(blocks):
            if blk is None:
                continue
            J, prec, logdet = blk
            rows = self._rows[g]
            diff = self.S.points[np.ix_(rows, J)] - mu[J]
            c[rows] = -0.5 * (J.size * LOG_2PI + logdet + np.einsum("ij,jk,ik->i", diff, prec, diff))
        return ("fixed", c)

    def _gm_stats(self, m0, nu, Sigma, label: int, strict: bool = True):
        d = self.model.d
        blocks = self._pattern_blocks(Sigma, label, strict)
        if blocks is None:
            return None
        try:
            Sprec, Slogdet = _inv_logdet(Sigma, f"covariance of label {label}")
        except SingularMatrixError:
            if strict:
                raise
            return None
        c = np.zeros(self.n)
        P = np.zeros((self.n, d, d))
        r = np.zeros((self.n, d))
        for g, blk in enumerate(blocks):
            if blk is None:
                continue
            J, prec, logdet = blk
            rows = self._rows[g]
            Y = self.S.points[np.ix_(rows, J)]
            PY = Y @ prec
            c[rows] = -0.5 * (J.size * LOG_2PI + logdet + np.einsum("ij,ij->i", Y, PY))
            P[np.ix_(rows, J, J)] = prec
            r[np.ix_(rows, J)] = PY
        A0 = nu * Sprec
        b0 = A0 @ m0
        const = 0.5 * d * math.log(nu) - 0.5 * (d * LOG_2PI + Slogdet) + 0.5 * d * LOG_2PI - 0.5 * m0 @ b0
        return ("gm", c, P, r, A0, b0, const)

    def _gm_stats_batch(self, m0, nu, covs, label: int) -> list:
        """Per-draw statistics for a stack of covariances, vectorized over
        draws; falls back to one draw at a time if any factorization fails."""
        K, d = covs.shape[0], self.model.d
        try:
            L = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError:
            return [self._gm_stats(m0, nu, cov, label, strict=False) for cov in covs]
        Linv = np.linalg.inv(L)
        Sprec = np.swapaxes(Linv, 1, 2) @ Linv
        Slogdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        c = np.zeros((K, self.n))
        P = np.zeros((K, self.n, d, d))
        r = np.zeros((K, self.n, d))
        for g, pat in enumerate(self._patterns):
            J = np.flatnonzero(pat)
            if J.size == 0:
                continue
            if J.size == d:
                prec, logdet = Sprec, Slogdet
            else:
                try:
                    Lj = np.linalg.cholesky(covs[:, J][:, :, J])
                except np.linalg.LinAlgError:
                    return [self._gm_stats(m0, nu, cov, label, strict=False) for cov in covs]
                Ljinv = np.linalg.inv(Lj)
                prec = np.swapaxes(Ljinv, 1, 2) @ Ljinv
                logdet = 2.0 * np.log(np.diagonal(Lj, axis1=1, axis2=2)).sum(axis=1)
            rows = self._rows[g]
            Y = self.S.points[np.ix_(rows, J)]
            PY = np.einsum("rj,kjl->krl", Y, prec)
            c[:, rows] = -0.5 * (J.size * LOG_2PI + logdet[:, None] + np.einsum("rj,krj->kr", Y, PY))
            P[np.ix_(np.arange(K), rows, J, J)] = prec[:, None, :, :]
            r[np.ix_(np.arange(K), rows, J)] = PY
        A0 = nu * Sprec
        b0 = A0 @ m0
        const = 0.5 * d * math.log(nu) - 0.5 * (d * LOG_2PI + Slogdet) + 0.5 * d * LOG_2PI - 0.5 * (b0 @ m0)
        return [("gm", c[k], P[k], r[k], A0[k], b0[k], float(const[k])) for k in range(K)]

    def subset_scores(self, members: np.ndarray, label: int) -> np.ndarray:
        """Log marginal likelihood of each member subset under ``label`` (0-based),
        including the label-prior weight of its points."""
        members = np.ascontiguousarray(members, dtype=np.uint8)
        prior = members.sum(axis=1) * self._logw[label]
        stats = self._stats[label]
        if stats[0] is not None and stats[0][0] == "fixed":
            return members @ stats[0][1] + prior
        vals = []
        for st in stats:
            if st is None:
                vals.append(np.full(members.shape[0], -np.inf))
                continue
            v = kernels.gaussian_subset_logml(members, *st[1:])
            if np.any(np.isnan(v)):
                if len(stats) == 1:
                    raise SingularMatrixError(f"posterior precision of label {label + 1} is not positive definite")
                v = np.where(np.isnan(v), -np.inf, v)
            vals.append(v)
        if len(vals) == 1:
            return vals[0] + prior
        stacked = np.stack(vals)
        empty = members.sum(axis=1) == 0
        if np.any(~np.isfinite(stacked).any(axis=0) & ~empty):
            raise OptclustError(f"all Monte Carlo draws gave a non-finite integrand for label {label + 1}")
        est = logsumexp(stacked, axis=0) - math.log(len(vals))
        est[empty] = 0.0
        return est + prior

    def label_function_scores(self, labels: np.ndarray) -> np.ndarray:
        """Log unnormalized posterior of each row of 0-based labels (R, n)."""
        labels = np.atleast_2d(np.asarray(labels))
        total = np.zeros(labels.shape[0])
        for i in range(self.l):
            total += self.subset_scores(labels == i, i)
        return total

    def partition_scores(self, blocks: np.ndarray) -> np.ndarray:
        """Log posterior of each canonical partition row, summed over every
        label function that induces it."""
        blocks = np.atleast_2d(np.asarray(blocks))
        R = blocks.shape[0]
        n_blocks = blocks.max(axis=1) + 1 if R else np.zeros(0, dtype=int)
        kmax = int(n_blocks.max()) if R else 0
        if kmax > self.l:
            raise OptclustError(f"partition has {kmax} blocks but the model has {self.l} labels")
        # s[r, b, i]: block b of row r evaluated under label i
        s = np.empty((R, kmax, self.l))
        for b in range(kmax):
            members = blocks == b
            for i in range(self.l):
                s[:, b, i] = self.subset_scores(members, i)
        out = np.full(R, -np.inf)
        for k in np.unique(n_blocks):
            rows = n_blocks == k
            terms = [
                sum(s[rows, b, perm[b]] for b in range(k)) for perm in itertools.permutations(range(self.l), int(k))
            ]
            out[rows] = logsumexp(np.stack(terms), axis=0)
        # points never appear in an unused label, which contributes factor 1
        return out


def posterior_table(
    S: PointSet,
    reference: Sequence[Partition],
    model: ModelSpec,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    rng=None,
    scorer: PartitionScorer | None = None,
) -> PosteriorTable:
    """Normalized posterior over ``reference`` partitions."""
    reference = list(reference)
    if not reference:
        raise OptclustError("empty reference set")
    for P in reference:
        if P.n != S.n:
            raise DimensionMismatchError(f"reference partition has {P.n} points, point set has {S.n}")
    if scorer is None:
        scorer = PartitionScorer(S, model, mc_samples, rng)
    blocks = np.array([P.blocks for P in reference], dtype=np.int64)
    return PosteriorTable.from_log_values(reference, scorer.partition_scores(blocks), model.l)
