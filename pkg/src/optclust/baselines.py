"""Comparison clusterers and imputers.

k-means, fuzzy c-means and hierarchical linkage work on complete matrices;
k-POD and FCM with optimal completion strategy work on incomplete data
directly.  ``gibbs_impute`` and ``mean_impute`` complete a point set before
the classical methods run.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage as scipy_linkage

from .core import OptclustError, Partition, PointSet
from .posterior import sample_inverse_wishart
from .simgen import calibrate_prior

__all__ = [
    "BaselineConfig",
    "KMeansResult",
    "FCMResult",
    "kmeans_fit",
    "kmeans",
    "fcm_fit",
    "fuzzy_cmeans",
    "fcm_ocs_fit",
    "fcm_ocs",
    "kpod_fit",
    "kpod",
    "hierarchical",
    "gibbs_impute",
    "mean_impute",
    "random_cluster",
]


@dataclass(frozen=True)
class BaselineConfig:
    k: int = 2
    fuzzifier: float = 2.0
    max_iters: int = 300
    tol: float = 1e-6
    restarts: int = 10
    seed: int | None = None
    # FCM-OCS initializes from complete rows below this overall missing fraction
    ocs_threshold: float = 0.2

    def __post_init__(self):
        if self.k < 1:
            raise OptclustError("k must be >= 1")
        if not self.fuzzifier > 1:
            raise OptclustError("fuzzifier must exceed 1")
        if not self.tol > 0:
            raise OptclustError("tol must be positive")
        if self.restarts < 1 or self.max_iters < 1:
            raise OptclustError("restarts and max_iters must be >= 1")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    objective: float
    n_iter: int

    @property
    def partition(self) -> Partition:
        return Partition(self.labels, max(2, self.centers.shape[0]))


def _sqdist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iters: int) -> KMeansResult:
    centers = centers.copy()
    k = centers.shape[0]
    labels = None
    it = 0
    for it in range(1, max_iters + 1):
        D = _sqdist(X, centers)
        new = D.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point farthest from its center
            far = int(D[np.arange(len(X)), new].argmax())
            new[far] = j
            counts = np.bincount(new, minlength=k)
            D[far] = np.inf
            D[far, j] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centers[j] = X[labels == j].mean(axis=0)
    obj = float(((X - centers[labels]) ** 2).sum())
    return KMeansResult(labels, centers, obj, it)


def kmeans_fit(X, cfg: BaselineConfig = BaselineConfig(), rng=None, init_centers=None) -> KMeansResult:
    """Lloyd iterations, best of ``cfg.restarts`` random-point initializations.

    With ``init_centers`` a single run starts from those centers.
    """
    X = np.asarray(X, dtype=float)
    if np.isnan(X).any():
        raise OptclustError("kmeans needs a complete data matrix")
    n = X.shape[0]
    k = min(cfg.k, n)
    if init_centers is not None:
        return _lloyd(X, np.asarray(init_centers, dtype=float), cfg.max_iters)
    rng = cfg.rng() if rng is None else rng
    best = None
    for _ in range(cfg.restarts):
        start = X[rng.choice(n, size=k, replace=False)]
        res = _lloyd(X, start, cfg.max_iters)
        if best is None or res.objective < best.objective:
            best = res
    return best


def kmeans(X, cfg: BaselineConfig = BaselineConfig(), rng=None) -> Partition:
    return kmeans_fit(X, cfg, rng).partition


@dataclass
class FCMResult:
    memberships: np.ndarray
    centers: np.ndarray
    objective: float
    history: list
    completed: np.ndarray | None = None

    @property
    def partition(self) -> Partition:
        return Partition(self.memberships.argmax(axis=1), max(2, self.centers.shape[0]))


def _memberships(X: np.ndarray, V: np.ndarray, m: float) -> np.ndarray:
    D = _sqdist(X, V)
    U = np.empty_like(D)
    zero = D <= 1e-300
    hit = zero.any(axis=1)
    if np.any(~hit):
        Dn = D[~hit]
        # u_ik = 1 / sum_j (d_ik / d_jk)^(1/(m-1)) on squared distances
        ratio = (Dn[:, :, None] / Dn[:, None, :]) ** (1.0 / (m - 1.0))
        U[~hit] = 1.0 / ratio.sum(axis=2)
    if np.any(hit):
        Z = zero[hit].astype(float)
        U[hit] = Z / Z.sum(axis=1, keepdims=True)
    return U


def _fcm_centers(X: np.ndarray, U: np.ndarray, m: float) -> np.ndarray:
    W = U**m
    return (W.T @ X) / W.sum(axis=0)[:, None]


def _fcm_objective(X: np.ndarray, U: np.ndarray, V: np.ndarray, m: float) -> float:
    return float(((U**m) * _sqdist(X, V)).sum())


def _fcm_run(X: np.ndarray, V: np.ndarray, cfg: BaselineConfig) -> FCMResult:
    m = cfg.fuzzifier
    history = []
    prev = np.inf
    U = _memberships(X, V, m)
    for _ in range(cfg.max_iters):
        V = _fcm_centers(X, U, m)
        U = _memberships(X, V, m)
        obj = _fcm_objective(X, U, V, m)
        history.append(obj)
        if abs(prev - obj) < cfg.tol:
            break
        prev = obj
    return FCMResult(U, V, history[-1], history)


def fcm_fit(X, cfg: BaselineConfig = BaselineConfig(), rng=None, init_centers=None) -> FCMResult:
    """Fuzzy c-means, best objective over random-point initializations."""
    X = np.asarray(X, dtype=float)
    if np.isnan(X).any():
        raise OptclustError("fuzzy c-means needs a complete data matrix")
    n = X.shape[0]
    k = min(cfg.k, n)
    if init_centers is not None:
        return _fcm_run(X, np.asarray(init_centers, dtype=float), cfg)
    rng = cfg.rng() if rng is None else rng
    best = None
    for _ in range(cfg.restarts):
        res = _fcm_run(X, X[rng.choice(n, size=k, replace=False)], cfg)
        if best is None or res.objective < best.objective:
            best = res
    return best


def fuzzy_cmeans(X, cfg: BaselineConfig = BaselineConfig(), rng=None) -> tuple[Partition, np.ndarray]:
    res = fcm_fit(X, cfg, rng)
    return res.partition, res.memberships


def fcm_ocs_fit(S: PointSet, cfg: BaselineConfig = BaselineConfig(), rng=None) -> FCMResult:
    """Fuzzy c-means with optimal completion of missing entries.

    Initial centers come from fuzzy c-means on the fully observed rows when
    the missing fraction is below ``cfg.ocs_threshold`` (and at least ``k``
    such rows exist), otherwise from fuzzy c-means on mean-imputed data.
    Each alternation updates memberships, centers, then every missing entry
    to the membership-weighted average of the center coordinates.
    """
    rng = cfg.rng() if rng is None else rng
    m = cfg.fuzzifier
    miss = ~S.observed
    Xc = mean_impute(S)
    complete = S.observed.all(axis=1)
    if S.missing_fraction < cfg.ocs_threshold and complete.sum() >= cfg.k:
        V = fcm_fit(S.points[complete], cfg, rng).centers
    else:
        V = fcm_fit(Xc, cfg, rng).centers
    history = []
    prev = np.inf
    U = _memberships(Xc, V, m)
    for _ in range(cfg.max_iters):
        V = _fcm_centers(Xc, U, m)
        W = U**m
        fill = (W @ V) / W.sum(axis=1, keepdims=True)
        Xc[miss] = fill[miss]
        U = _memberships(Xc, V, m)
        obj = _fcm_objective(Xc, U, V, m)
        history.append(obj)
        if abs(prev - obj) < cfg.tol:
            break
        prev = obj
    return FCMResult(U, V, history[-1], history, Xc)


def fcm_ocs(S: PointSet, cfg: BaselineConfig = BaselineConfig(), rng=None) -> Partition:
    return fcm_ocs_fit(S, cfg, rng).partition


def _observed_distortion(S: PointSet, Xc: np.ndarray, res: KMeansResult) -> float:
    resid = np.where(S.observed, Xc - res.centers[res.labels], 0.0)
    return float((resid**2).sum())


def kpod_fit(S: PointSet, cfg: BaselineConfig = BaselineConfig(), rng=None) -> tuple[KMeansResult, list]:
    """k-POD: alternate centroid-based completion and k-means on the completed
    matrix until the partition stops changing.

    Returns the final k-means state and the observed-entry distortion after
    each round.
    """
    if cfg.k < 2:
        raise OptclustError("k-POD needs k >= 2")
    miss = ~S.observed
    Xc = mean_impute(S)
    res = kmeans_fit(Xc, cfg, rng)
    history = [_observed_distortion(S, Xc, res)]
    for _ in range(cfg.max_iters):
        Xc[miss] = res.centers[res.labels][miss]
        new = kmeans_fit(Xc, cfg, init_centers=res.centers)
        history.append(_observed_distortion(S, Xc, new))
        stable = np.array_equal(new.labels, res.labels)
        res = new
        if stable:
            break
    return res, history


def kpod(S: PointSet, cfg: BaselineConfig = BaselineConfig(), rng=None) -> Partition:
    return kpod_fit(S, cfg, rng)[0].partition


def hierarchical(X, linkage: str = "single", k: int = 2) -> Partition:
    """Agglomerative clustering with Euclidean single or complete linkage."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or np.isnan(X).any():
        raise OptclustError("hierarchical clustering needs a complete (n, d) matrix")
    if linkage not in ("single", "complete"):
        raise OptclustError(f"unsupported linkage {linkage!r}")
    n = X.shape[0]
    if k >= n:
        return Partition(np.arange(n), max(2, n))
    Z = scipy_linkage(X, method=linkage, metric="euclidean")
    return Partition(cut_tree(Z, n_clusters=k).ravel(), max(2, k))


def mean_impute(S: PointSet) -> np.ndarray:
    """Fill each missing entry with its feature's observed mean."""
    X = S.points.copy()
    obs = S.observed
    counts = obs.sum(axis=0)
    sums = np.where(obs, X, 0.0).sum(axis=0)
    never = counts == 0
    if never.any():
        warnings.warn(f"features {np.flatnonzero(never).tolist()} never observed; filled with 0", RuntimeWarning, stacklevel=2)
    col = np.where(never, 0.0, sums / np.maximum(counts, 1))
    return np.where(obs, X, col[None, :])


def gibbs_impute(S: PointSet, sweeps: int = 500, burn_in: int = 100, rng=None, prior=None) -> np.ndarray:
    """Posterior-mean imputation under a single Gaussian with a conjugate
    normal-inverse-Wishart prior.

    Each sweep draws ``(mu, Sigma)`` given the completed data, then every
    point's missing block from its conditional Gaussian.  The returned matrix
    holds the average of the post-burn-in draws in the missing entries.
    ``prior`` defaults to :func:`calibrate_prior` on the observed entries.
    """
    if S.n < 2:
        raise OptclustError("gibbs_impute needs at least 2 points")
    if burn_in >= sweeps:
        raise OptclustError("burn_in must be smaller than sweeps")
    miss = ~S.observed
    if not miss.any():
        return S.points.copy()
    rng = np.random.default_rng() if rng is None else rng
    prior = calibrate_prior(S) if prior is None else prior
    n, d = S.n, S.d
    m0, Psi0, kappa0, nu0 = prior.prior_mean(), prior.scale_matrix(), prior.kappa, prior.nu
    Xc = mean_impute(S)
    acc = np.zeros_like(Xc)
    patterns, pattern_of = np.unique(S.observed, axis=0, return_inverse=True)
    pattern_of = pattern_of.ravel()
    groups = [
        (np.flatnonzero(pattern_of == g), np.flatnonzero(~pat), np.flatnonzero(pat))
        for g, pat in enumerate(patterns)
        if not pat.all()
    ]
    nu_n, kappa_n = nu0 + n, kappa0 + n
    eye = np.eye(d)
    for sweep in range(sweeps):
        xbar = Xc.mean(axis=0)
        C = Xc - xbar
        diff = xbar - m0
        Psi_n = Psi0 + C.T @ C + (nu0 * n / nu_n) * np.outer(diff, diff)
        Sigma = sample_inverse_wishart(kappa_n, 0.5 * (Psi_n + Psi_n.T), rng)
        mu = rng.multivariate_normal((nu0 * m0 + n * xbar) / nu_n, Sigma / nu_n, method="cholesky")
        for rows, M, O in groups:
            if O.size:
                K = np.linalg.solve(Sigma[np.ix_(O, O)], Sigma[np.ix_(O, M)]).T
                cmean = mu[M] + (Xc[np.ix_(rows, O)] - mu[O]) @ K.T
                ccov = Sigma[np.ix_(M, M)] - K @ Sigma[np.ix_(O, M)]
            else:
                cmean = np.broadcast_to(mu[M], (rows.size, M.size))
                ccov = Sigma[np.ix_(M, M)]
            ccov = 0.5 * (ccov + ccov.T)
            try:
                L = np.linalg.cholesky(ccov)
            except np.linalg.LinAlgError:
                L = np.linalg.cholesky(ccov + 1e-9 * np.trace(ccov) / M.size * eye[: M.size, : M.size])
            Xc[np.ix_(rows, M)] = cmean + rng.standard_normal((rows.size, M.size)) @ L.T
        if sweep >= burn_in:
            acc += Xc
    out = S.points.copy()
    out[miss] = (acc / (sweeps - burn_in))[miss]
    return out


def random_cluster(n: int, sizes, rng=None) -> Partition:
    """Uniformly random partition with the given two block sizes."""
    rng = np.random.default_rng() if rng is None else rng
    sizes = tuple(int(s) for s in sizes)
    if sum(sizes) != n or len(sizes) != 2:
        raise OptclustError(f"sizes {sizes} must be two block sizes summing to n={n}")
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[sizes[0]:]] = 1
    return Partition(labels, 2)
