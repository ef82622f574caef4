"""Numeric agreement checks between cohorts, and between a model and new data."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .cluster import ClusterModel
from .distfit import (
    CohortModel,
    histogram,
    is_binary_column,
    plotting_positions,
    qq_points,
    r_squared,
    rss,
)
from .distributions import FittedDistribution
from .table import FeatureMatrix

REPORT_SCHEMA_VERSION = "validation-report/1"
MAX_QQ_POINTS = 1000


class SchemaError(ValueError):
    pass


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup |F_a - F_b| over the pooled points."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic needs two nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_one_sample(
    x, cdf: Callable[[np.ndarray], np.ndarray], cdf_left: Callable[[np.ndarray], np.ndarray] | None = None
) -> float:
    """sup |ECDF - F| against a model CDF.

    ``cdf_left`` gives the left limit F(x-) for models with atoms; it
    defaults to ``cdf`` (continuous models).
    """
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("ks_one_sample needs a nonempty sample")
    n = x.size
    cdf_left = cdf_left or cdf
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf(x))
    d_minus = np.max(cdf_left(x) - (i - 1) / n)
    return float(min(max(d_plus, d_minus, 0.0), 1.0))


def ks_critical_two_sample(alpha: float, n: int, m: int) -> float:
    """Asymptotic two-sample critical value c(alpha) * sqrt((n + m) / (n m))."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def ks_critical_one_sample(alpha: float, n: int) -> float:
    return float(stats.kstwo.ppf(1.0 - alpha, n))


@dataclass(frozen=True)
class Thresholds:
    alpha: float = 0.01
    qq_r2_min: float = 0.98
    proportion_tol: float = 0.01
    rss_max: float | None = None
    # "bonferroni" divides alpha by the number of cells.
    correction: str = "none"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.correction not in ("none", "bonferroni"):
            raise ValueError(f"unknown correction {self.correction!r}")

    def cell_alpha(self, n_cells: int) -> float:
        return self.alpha / max(n_cells, 1) if self.correction == "bonferroni" else self.alpha


@dataclass
class CellResult:
    cluster: int
    attribute: str
    n_reference: int
    n_compared: int
    ks_statistic: float | None
    ks_critical: float | None
    rss: float | None
    qq_r2: float | None
    ks_pass: bool
    qq_pass: bool
    passed: bool


@dataclass
class ValidationReport:
    kind: str
    cells: list[CellResult]
    reference_proportions: list[float]
    compared_proportions: list[float]
    proportion_deltas: list[float]
    thresholds: Thresholds
    passed: bool
    notes: list[str] = field(default_factory=list)

    def cell(self, cluster: int, attribute: str) -> CellResult:
        for c in self.cells:
            if c.cluster == cluster and c.attribute == attribute:
                return c
        raise KeyError((cluster, attribute))

    @property
    def ks_pass_rate(self) -> float:
        return sum(c.ks_pass for c in self.cells) / len(self.cells) if self.cells else 1.0

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "kind": self.kind,
            "passed": self.passed,
            "thresholds": asdict(self.thresholds),
            "reference_proportions": self.reference_proportions,
            "compared_proportions": self.compared_proportions,
            "proportion_deltas": self.proportion_deltas,
            "cells": [asdict(c) for c in self.cells],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _proportions(labels: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k).astype(float)
    return counts / counts.sum() if counts.sum() else counts


def _matched_quantile_r2(a: np.ndarray, b: np.ndarray) -> float:
    m = min(a.size, b.size, MAX_QQ_POINTS)
    probs = plotting_positions(m)
    return r_squared(np.quantile(a, probs), np.quantile(b, probs))


def _shared_histogram_rss(reference: np.ndarray, other: np.ndarray) -> float:
    hist = histogram(reference)
    counts, _ = np.histogram(other, bins=hist.bin_edges)
    gap = hist.density - counts / (other.size * hist.widths)
    return float(np.sum(gap * gap) / len(hist.counts))


def _labels_k(labels) -> tuple[np.ndarray, int]:
    labels = np.asarray(labels, dtype=int)
    return labels, (int(labels.max()) + 1 if labels.size else 0)


def _finish(kind, cells, ref_props, cmp_props, thresholds, notes) -> ValidationReport:
    deltas = (np.asarray(cmp_props) - np.asarray(ref_props)).tolist()
    prop_ok = all(abs(d) <= thresholds.proportion_tol for d in deltas)
    if not prop_ok:
        notes.append("cluster proportions differ beyond tolerance")
    return ValidationReport(
        kind=kind,
        cells=cells,
        reference_proportions=[float(p) for p in ref_props],
        compared_proportions=[float(p) for p in cmp_props],
        proportion_deltas=[float(d) for d in deltas],
        thresholds=thresholds,
        passed=prop_ok and all(c.passed for c in cells),
        notes=notes,
    )


def compare_cohorts(
    original: FeatureMatrix,
    original_labels,
    generated: FeatureMatrix,
    generated_labels,
    thresholds: Thresholds = Thresholds(),
    attributes: Sequence[str] | None = None,
) -> ValidationReport:
    """Per (cluster, attribute): two-sample KS, shared-bin histogram RSS, matched-quantile r^2."""
    attributes = tuple(generated.columns if attributes is None else attributes)
    missing = [a for a in attributes if a not in original.columns or a not in generated.columns]
    if missing:
        raise SchemaError(f"attributes missing from a cohort: {missing}")
    o_labels, k = _labels_k(original_labels)
    g_labels, k_gen = _labels_k(generated_labels)
    if len(o_labels) != original.n_rows or len(g_labels) != generated.n_rows:
        raise SchemaError("labels do not match the table rows")
    if k != k_gen:
        raise SchemaError(f"cluster counts differ: original {k}, generated {k_gen}")
    alpha = thresholds.cell_alpha(k * len(attributes))
    cells = []
    for c in range(k):
        o_rows = original.values[o_labels == c]
        g_rows = generated.values[g_labels == c]
        for a in attributes:
            x = o_rows[:, original.columns.index(a)]
            y = g_rows[:, generated.columns.index(a)]
            if x.size == 0 or y.size == 0:
                cells.append(CellResult(c, a, x.size, y.size, None, None, None, None, False, False, False))
                continue
            ks = ks_statistic(x, y)
            crit = ks_critical_two_sample(alpha, x.size, y.size)
            r2 = _matched_quantile_r2(x, y)
            score = _shared_histogram_rss(x, y)
            ks_ok = ks <= crit
            qq_ok = is_binary_column(a, x) or r2 >= thresholds.qq_r2_min
            rss_ok = thresholds.rss_max is None or score <= thresholds.rss_max
            cells.append(CellResult(c, a, x.size, y.size, ks, crit, score, r2, ks_ok, qq_ok,
                                    ks_ok and qq_ok and rss_ok))
    return _finish("cohort", cells, _proportions(o_labels, k), _proportions(g_labels, k),
                   thresholds, [])


def _model_cdfs(dist: FittedDistribution):
    if dist.integer:
        return dist.discretized_cdf, lambda x: dist.discretized_cdf(np.asarray(x) - 0.5)
    if dist.atomic:
        return dist.cdf, lambda x: dist.cdf(np.asarray(x) - 0.5)
    return dist.cdf, None


def holdout_check(
    model: CohortModel,
    holdout: FeatureMatrix,
    cluster_model: ClusterModel,
    thresholds: Thresholds = Thresholds(),
) -> ValidationReport:
    """Assign holdout users with the clustering, then test them against the model marginals.

    Each cell gets a one-sample KS test against the model CDF (of the
    rounded value for count attributes) and a probability-plot r^2.
    """
    missing = [a for a in set(model.attributes) | set(cluster_model.attributes)
               if a not in holdout.columns]
    if missing:
        raise SchemaError(f"holdout lacks columns: {sorted(missing)}")
    if cluster_model.k != model.k:
        raise SchemaError(f"cluster model has k={cluster_model.k}, cohort model k={model.k}")
    labels = cluster_model.predict(holdout.select(cluster_model.attributes).values)
    alpha = thresholds.cell_alpha(model.k * len(model.attributes))
    cells = []
    notes = []
    for c in range(model.k):
        rows = holdout.values[labels == c]
        for a in model.attributes:
            x = rows[:, holdout.columns.index(a)]
            dist = model.clusters[c][a]
            if x.size == 0:
                cells.append(CellResult(c, a, 0, 0, None, None, None, None, False, False, False))
                notes.append(f"cluster {c} received no holdout users")
                continue
            cdf, left = _model_cdfs(dist)
            ks = ks_one_sample(x, cdf, left)
            crit = ks_critical_one_sample(alpha, x.size)
            points, _ = qq_points(x, dist)
            r2 = r_squared(dist.discretize(points[:, 0]), points[:, 1])
            score = rss(histogram(x), dist)
            ks_ok = ks <= crit
            qq_ok = dist.atomic or r2 >= thresholds.qq_r2_min
            rss_ok = thresholds.rss_max is None or score <= thresholds.rss_max
            cells.append(CellResult(c, a, int(model.sizes[c]) if model.sizes else 0, x.size, ks, crit,
                                    score, r2, ks_ok, qq_ok, ks_ok and qq_ok and rss_ok))
    return _finish("holdout", cells, model.weights.tolist(), _proportions(labels, model.k).tolist(),
                   thresholds, sorted(set(notes)))
