"""Synthetic user generation from a fitted cohort model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distfit import COHORT_SCHEMA_VERSION, CohortModel
from .distributions import FittedDistribution
from .table import CANONICAL_COLUMNS, FeatureMatrix, write_table_csv

# Replaces an exact 0 draw; random() never returns 1.
_TINY = 2.0**-54


def allocate_counts(weights: Sequence[float], n: int) -> list[int]:
    """Largest-remainder (Hamilton) apportionment of ``n`` users to clusters.

    Equal remainders favour the lower cluster index.

    >>> allocate_counts([1/3, 1/3, 1/3], 10)
    [4, 3, 3]
    """
    w = [float(x) for x in weights]
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise ValueError("weights must be finite and nonnegative")
    if abs(sum(w) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {sum(w)!r}")
    if n < 1:
        raise ValueError("n must be positive")
    quotas = [x * n for x in w]
    counts = [math.floor(q) for q in quotas]
    spare = n - sum(counts)
    by_remainder = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[:spare]:
        counts[i] += 1
    return counts


def sample_distribution(dist: FittedDistribution, u: float) -> float:
    """Inverse-CDF draw for one uniform variate in (0, 1), before any rounding."""
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    return float(dist.ppf(np.array([u]))[0])


def uniform_stream(seed: int, cluster: int, attribute: int, size: int) -> np.ndarray:
    """Uniforms in (0, 1) for one (cluster, attribute) cell.

    Each cell has its own Philox stream keyed by (seed, cluster, attribute);
    draw j belongs to user j, so a prefix never depends on ``size``.
    """
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, cluster, attribute])))
    u = gen.random(size)
    u[u == 0.0] = _TINY
    return u


@dataclass
class SyntheticCohort:
    table: FeatureMatrix
    cluster_labels: np.ndarray
    seed: int
    model_version: str = COHORT_SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)

    def write_csv(self, path: str | Path) -> None:
        write_table_csv(path, self.table, extra={"cluster_label": [int(c) for c in self.cluster_labels]})


def output_columns(attributes: Sequence[str]) -> tuple[str, ...]:
    canonical = [c for c in CANONICAL_COLUMNS if c in attributes]
    return tuple(canonical + [a for a in attributes if a not in CANONICAL_COLUMNS])


def generate_cohort(model: CohortModel, n: int, seed: int, continuous: bool = False) -> SyntheticCohort:
    """Draw ``n`` users; cluster sizes are the apportionment of the model weights.

    Attributes are sampled independently within a cluster. Count attributes
    are rounded half-up and clamped at zero unless ``continuous`` is set.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    sizes = allocate_counts(model.weights, n)
    columns = output_columns(model.attributes)
    attr_index = {a: i for i, a in enumerate(model.attributes)}
    blocks, labels, ids = [], [], []
    for c, size in enumerate(sizes):
        block = np.empty((size, len(columns)))
        for j, name in enumerate(columns):
            dist = model.clusters[c][name]
            u = uniform_stream(seed, c, attr_index[name], size)
            values = dist.ppf(u)
            block[:, j] = values if continuous else dist.discretize(values)
        blocks.append(block)
        labels.append(np.full(size, c, dtype=int))
        ids.extend(f"synthetic-{c}-{i}" for i in range(size))
    values = np.vstack(blocks) if blocks else np.empty((0, len(columns)))
    return SyntheticCohort(
        table=FeatureMatrix(values, columns, tuple(ids)),
        cluster_labels=np.concatenate(labels) if labels else np.empty(0, dtype=int),
        seed=seed,
        metadata={
            "n": n,
            "cluster_sizes": sizes,
            "rounding": "none" if continuous else "count attributes rounded half-up, clamped at 0",
        },
    )
