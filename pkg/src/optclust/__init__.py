"""Bayes-optimal clustering of Gaussian point sets with missing values."""
from .baselines import BaselineConfig, fcm_ocs, fuzzy_cmeans, gibbs_impute, hierarchical, kmeans, kpod, mean_impute, random_cluster
from .clusterer import ClusteringContext, InfeasibleSizeError, SearchConfig, bayes_cluster, optimal_cluster, pmax_cluster, pseed_cluster, search
from .core import LabelFunction, OptclustError, Partition, PointSet, clustering_error, enumerate_partitions, partition_cost
from .kernels import BACKEND
from .posterior import FixedModel, GaussianMeanModel, GIWModel, PosteriorTable, log_posterior, posterior_table
from .simgen import CalibratedPrior, calibrate_prior, generate_instance, mcar_mask, standard_model

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BaselineConfig",
    "CalibratedPrior",
    "ClusteringContext",
    "FixedModel",
    "GaussianMeanModel",
    "GIWModel",
    "InfeasibleSizeError",
    "LabelFunction",
    "OptclustError",
    "Partition",
    "PointSet",
    "PosteriorTable",
    "SearchConfig",
    "bayes_cluster",
    "calibrate_prior",
    "clustering_error",
    "enumerate_partitions",
    "fcm_ocs",
    "fuzzy_cmeans",
    "generate_instance",
    "gibbs_impute",
    "hierarchical",
    "kmeans",
    "kpod",
    "log_posterior",
    "mcar_mask",
    "mean_impute",
    "optimal_cluster",
    "partition_cost",
    "pmax_cluster",
    "posterior_table",
    "pseed_cluster",
    "random_cluster",
    "search",
    "standard_model",
]
