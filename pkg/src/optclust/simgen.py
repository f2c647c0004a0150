"""Synthetic labeled point sets, MCAR masking and method-of-moments prior
calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabelFunction, OptclustError, PointSet
from .posterior import FixedModel, GaussianMeanModel, GIWModel, ModelSpec, sample_inverse_wishart

__all__ = [
    "MODEL_NAMES",
    "standard_model",
    "draw_parameters",
    "generate_instance",
    "mcar_mask",
    "CalibratedPrior",
    "calibrate_prior",
]

MODEL_NAMES = ("fixed", "gaussian_mean", "giw")


def standard_model(name: str, d: int = 5) -> ModelSpec:
    """The three two-label generation models with the simulation parameters
    used for the error-vs-missing-probability experiments."""
    ones = np.ones(d)
    eye = np.eye(d)
    if name == "fixed":
        return FixedModel([0.0 * ones, 0.445 * ones], [0.23 * eye, 0.23 * eye])
    if name == "gaussian_mean":
        return GaussianMeanModel([0.0 * ones, 0.45 * ones], [30.0, 5.0], [0.28 * eye, 0.28 * eye])
    if name == "giw":
        return GIWModel([0.0 * ones, 0.45 * ones], [30.0, 5.0], [75.0, 75.0], [20.7 * eye, 20.7 * eye])
    raise OptclustError(f"unknown generation model {name!r}; expected one of {MODEL_NAMES}")


def draw_parameters(model: ModelSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-label (means, covariances) drawn from the model's prior."""
    if isinstance(model, FixedModel):
        return np.array(model.means), np.array(model.covs)
    if isinstance(model, GaussianMeanModel):
        covs = np.array(model.covs)
    elif isinstance(model, GIWModel):
        covs = np.stack([sample_inverse_wishart(model.kappas[i], model.scales[i], rng) for i in range(model.l)])
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    means = np.stack([
        rng.multivariate_normal(model.prior_means[i], covs[i] / model.nus[i], method="cholesky") for i in range(model.l)
    ])
    return means, covs


def generate_instance(model: ModelSpec, n1: int, n2: int, rng: np.random.Generator, shuffle: bool = True) -> tuple[PointSet, LabelFunction]:
    """Draw label distributions from ``model``, then ``n1`` points from the
    first and ``n2`` from the second.

    Points are shuffled unless ``shuffle`` is False.
    """
    if n1 < 0 or n2 < 0 or n1 + n2 < 1:
        raise OptclustError("need n1, n2 >= 0 and n1 + n2 >= 1")
    if model.l != 2:
        raise OptclustError("generate_instance draws two labels")
    means, covs = draw_parameters(model, rng)
    parts, labels = [], []
    for i, ni in enumerate((n1, n2)):
        if ni:
            parts.append(rng.multivariate_normal(means[i], covs[i], size=ni, method="cholesky"))
            labels.append(np.full(ni, i + 1))
    X = np.vstack(parts)
    lab = np.concatenate(labels)
    if shuffle:
        perm = rng.permutation(X.shape[0])
        X, lab = X[perm], lab[perm]
    return PointSet(X, np.ones_like(X, dtype=bool)), LabelFunction(lab, 2)


def mcar_mask(S: PointSet, p: float, rng: np.random.Generator) -> PointSet:
    """Hide each entry independently with probability ``p``."""
    if not 0.0 <= p < 1.0:
        raise OptclustError(f"missing probability must lie in [0, 1), got {p}")
    hide = rng.random(S.observed.shape) < p
    return PointSet(S.points, S.observed & ~hide)


@dataclass(frozen=True)
class CalibratedPrior:
    """Five-scalar structured prior shared by both labels.

    Expands to ``m_i = m * 1_d`` and a scale matrix with ``sigma2`` on the
    diagonal and ``rho * sigma2`` off it.
    """

    m: float
    sigma2: float
    rho: float
    kappa: float
    nu: float
    d: int

    def __post_init__(self):
        d = self.d
        if not self.sigma2 > 0:
            raise OptclustError("sigma2 must be positive")
        lo = -1.0 / (d - 1) if d > 1 else -math.inf
        if not lo < self.rho < 1:
            raise OptclustError(f"rho={self.rho} outside ({lo}, 1)")
        if not self.kappa > d - 1:
            raise OptclustError("kappa must exceed d - 1")
        if not self.nu > 0:
            raise OptclustError("nu must be positive")

    def prior_mean(self) -> np.ndarray:
        return np.full(self.d, self.m)

    def scale_matrix(self) -> np.ndarray:
        S = np.full((self.d, self.d), self.rho * self.sigma2)
        np.fill_diagonal(S, self.sigma2)
        return S

    def expected_covariance(self) -> np.ndarray:
        return self.scale_matrix() / (self.kappa - self.d - 1)

    def giw_model(self, l: int = 2) -> GIWModel:
        return GIWModel(
            np.tile(self.prior_mean(), (l, 1)),
            np.full(l, self.nu),
            np.full(l, self.kappa),
            np.tile(self.scale_matrix(), (l, 1, 1)),
        )


KAPPA_MAX = 1e4
NU_RANGE = (1.0, 1e4)


def calibrate_prior(data) -> CalibratedPrior:
    """Method-of-moments estimate of ``(m, sigma2, rho, kappa, nu)``.

    ``data`` is a :class:`PointSet` or an array with NaN for missing entries.

    * ``m``: grand mean of observed entries.
    * expected variance ``sigma2 / (kappa - d - 1)`` matches the average
      per-feature sample variance; ``rho`` is the average pairwise
      (pairwise-complete) sample correlation.
    * ``kappa`` matches the squared coefficient of variation of the
      per-feature variances, net of sampling noise, to ``2 / (kappa - d - 3)``;
      clamped to ``[d + 2, 1e4]``.
    * ``nu`` matches the spread of feature means, net of sampling noise, to
      the expected variance divided by ``nu``; clamped to ``[1, 1e4]``.
    """
    X = data.points if isinstance(data, PointSet) else np.array(data, dtype=float, ndmin=2)
    n, d = X.shape
    if n < 2:
        raise OptclustError("calibration needs at least 2 points")
    obs = ~np.isnan(X)
    counts = obs.sum(axis=0)
    for k in range(d):
        if counts[k] < 2:
            raise OptclustError(f"feature {k} has fewer than 2 observed values")
    means = np.nanmean(X, axis=0)
    variances = np.nanvar(X, axis=0, ddof=1)
    for k in range(d):
        if not variances[k] > 0:
            raise OptclustError(f"feature {k} has zero variance")
    m = float(np.nanmean(X))
    s2 = float(variances.mean())

    corrs = []
    for a in range(d):
        for b in range(a + 1, d):
            both = obs[:, a] & obs[:, b]
            if both.sum() >= 3:
                xa, xb = X[both, a], X[both, b]
                if xa.std() > 0 and xb.std() > 0:
                    corrs.append(np.corrcoef(xa, xb)[0, 1])
    rho = float(np.mean(corrs)) if corrs else 0.0
    lo = -1.0 / (d - 1) if d > 1 else -1.0
    eps = 1e-6
    rho = min(max(rho, lo + eps), 1.0 - eps)

    kappa = KAPPA_MAX
    if d >= 2:
        cv2 = variances.var(ddof=1) / s2**2
        excess = cv2 - float(np.mean(2.0 / (counts - 1)))
        if excess > 0:
            kappa = d + 3 + 2.0 / excess
    kappa = float(min(max(kappa, d + 2), KAPPA_MAX))

    nu = NU_RANGE[1]
    if d >= 2:
        excess = means.var(ddof=1) - float(np.mean(variances / counts))
        if excess > 0:
            nu = s2 / excess
    nu = float(min(max(nu, NU_RANGE[0]), NU_RANGE[1]))

    return CalibratedPrior(m=m, sigma2=s2 * (kappa - d - 1), rho=rho, kappa=kappa, nu=nu, d=d)
