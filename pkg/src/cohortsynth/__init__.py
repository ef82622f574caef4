"""Characterize a user population from tweet-stream archives and generate
synthetic cohorts with matching per-cluster attribute distributions."""

__version__ = "0.1.0"

from .table import CANONICAL_COLUMNS, FeatureMatrix  # noqa: E402
from .ingest import ingest_sources, ingest_stream, parse_tweet_line, encode_attributes  # noqa: E402
from .pca import covariance_matrix, eigendecomposition_symmetric, fit_pca, loadings, select_attributes  # noqa: E402
from .cluster import (  # noqa: E402
    ClusterModel, assign, elbow_k, kmeans_fit, label_clusters, transform_features, wcss_curve,
)
from .distributions import FAMILIES, FittedDistribution, fit_family  # noqa: E402
from .distfit import CohortModel, best_fit, fit_cluster_model, histogram, qq_points, rss  # noqa: E402
from .synth import allocate_counts, generate_cohort, sample_distribution  # noqa: E402
from .validate import Thresholds, compare_cohorts, holdout_check, ks_statistic  # noqa: E402

__all__ = [
    "CANONICAL_COLUMNS", "FeatureMatrix",
    "ingest_sources", "ingest_stream", "parse_tweet_line", "encode_attributes",
    "covariance_matrix", "eigendecomposition_symmetric", "fit_pca", "loadings", "select_attributes",
    "ClusterModel", "assign", "elbow_k", "kmeans_fit", "label_clusters", "transform_features", "wcss_curve",
    "FAMILIES", "FittedDistribution", "fit_family",
    "CohortModel", "best_fit", "fit_cluster_model", "histogram", "qq_points", "rss",
    "allocate_counts", "generate_cohort", "sample_distribution",
    "Thresholds", "compare_cohorts", "holdout_check", "ks_statistic",
]
