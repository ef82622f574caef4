"""Per-cluster distribution fitting and the cohort model it produces.

Every (cluster, attribute) cell is fitted with each applicable family, the
families are scored by the squared distance between the histogram density
and the model density, and the winner is kept together with its
probability-plot correlation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distributions import FAMILIES, FitError, FittedDistribution, fit_family, point_mass
from .table import BOOLEAN_COLUMNS, FeatureMatrix

COHORT_SCHEMA_VERSION = "cohort-model/1"
MAX_AUTO_BINS = 200
MIN_CONFIDENT_SAMPLES = 30
POOR_QQ_R2 = 0.9


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    n: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.n * self.widths)


def auto_bin_count(x: np.ndarray) -> int:
    """Freedman-Diaconis bin count; Sturges when the IQR is zero; at most 200."""
    n = x.size
    span = float(np.max(x) - np.min(x))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    if span == 0:
        return 1
    if iqr > 0:
        width = 2.0 * iqr / n ** (1.0 / 3.0)
        bins = math.ceil(span / width)
    else:
        bins = math.ceil(math.log2(n)) + 1
    return int(min(max(bins, 1), MAX_AUTO_BINS))


def histogram(samples, bins: int | str = "auto") -> Histogram:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("histogram of an empty sample")
    if bins == "auto":
        nbins = auto_bin_count(x)
    elif isinstance(bins, (int, np.integer)) and bins > 0:
        nbins = int(bins)
    else:
        raise ValueError(f"bins must be a positive integer or 'auto', got {bins!r}")
    lo, hi = float(np.min(x)), float(np.max(x))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(x, bins=nbins, range=(lo, hi))
    return Histogram(edges, counts, int(x.size))


def _model_density(hist: Histogram, dist: FittedDistribution) -> np.ndarray:
    if dist.atomic:
        if dist.family == "bernoulli":
            atoms, mass = np.array([0.0, 1.0]), np.array([1 - dist.params["p"], dist.params["p"]])
        else:
            atoms, mass = np.array([dist.params["low"]]), np.array([1.0])
        inside = (atoms >= hist.bin_edges[0]) & (atoms <= hist.bin_edges[-1])
        binned, _ = np.histogram(atoms[inside], bins=hist.bin_edges, weights=mass[inside])
        return binned / hist.widths
    return dist.pdf(hist.midpoints)


def rss(hist: Histogram, dist: FittedDistribution) -> float:
    """Mean over bins of the squared gap between histogram and model densities."""
    gap = hist.density - _model_density(hist, dist)
    return float(np.sum(gap * gap) / len(hist.counts))


def noise_floor(hist: Histogram) -> float:
    """Expected RSS of the true density against this histogram (binomial bin noise)."""
    var = hist.density / (hist.n * hist.widths)
    return float(np.sum(var) / len(hist.counts))


def r_squared(a: np.ndarray, b: np.ndarray) -> float:
    if a.size <= 1:
        return 1.0
    sa, sb = float(np.std(a)), float(np.std(b))
    if sa == 0 and sb == 0:
        return 1.0
    if sa == 0 or sb == 0:
        return 0.0
    r = float(np.mean((a - a.mean()) * (b - b.mean()))) / (sa * sb)
    return min(max(r * r, 0.0), 1.0)


def plotting_positions(n: int) -> np.ndarray:
    return (np.arange(1, n + 1) - 0.5) / n


def qq_points(samples, dist: FittedDistribution) -> tuple[np.ndarray, float]:
    """Probability-plot data: rows of (theoretical quantile, ordered sample) and r^2.

    Theoretical quantiles sit at plotting positions (i - 0.5) / n.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("qq_points of an empty sample")
    theo = dist.ppf(plotting_positions(x.size))
    return np.column_stack([theo, x]), r_squared(theo, x)


def _applicable(x: np.ndarray, families: Sequence[str]) -> tuple[list[str], list[str]]:
    binary = bool(np.all((x == 0) | (x == 1)))
    use, skip = [], []
    for fam in FAMILIES:
        if fam not in families:
            continue
        # 0/1 data is bernoulli by rule; bernoulli fits nothing else.
        if (fam == "bernoulli") == binary:
            use.append(fam)
        else:
            skip.append(fam)
    return use, skip


def best_fit(
    samples,
    families: Iterable[str] = FAMILIES,
    bins: int | str = "auto",
    integer: bool = False,
) -> FittedDistribution:
    """Minimum-RSS family over a histogram shared by all candidates.

    Families whose support excludes the data are skipped and listed in
    ``skipped``. Candidates whose RSS exceeds the minimum by less than the
    histogram's sampling noise stay in contention, and among those the family
    with fewer parameters wins; remaining ties go to the lower RSS, then to
    the earlier family in ``FAMILIES``.
    A constant non-binary sample becomes a point mass (flagged low-confidence).
    """
    families = tuple(families)
    unknown = [f for f in families if f not in FAMILIES]
    if not families or unknown:
        raise FitError(f"need a nonempty subset of {FAMILIES}, got {families}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise FitError("no samples to fit")
    use, skipped = _applicable(x, families)
    if not use:
        raise FitError(f"no applicable family among {families} for this sample")
    if use != ["bernoulli"] and x[0] == x[-1]:
        return point_mass(x[0]).with_scores(
            integer=integer, rss=0.0, qq_r2=1.0, low_confidence=True,
            skipped=tuple(skipped + use), notes=("constant sample; modeled as a point mass",),
        )
    hist = histogram(x, bins)
    scored = []
    for fam in use:
        try:
            fitted = fit_family(x, fam)
        except FitError:
            skipped.append(fam)
            continue
        scored.append((rss(hist, fitted), fitted))
    if not scored:
        raise FitError(f"no applicable family among {families} for this sample")
    cutoff = min(sc for sc, _ in scored) + noise_floor(hist)
    tied = [(len(f.params), sc, FAMILIES.index(f.family), f) for sc, f in scored if sc <= cutoff]
    _, score, _, fitted = min(tied, key=lambda t: t[:3])
    _, r2 = qq_points(x, fitted)
    skipped_sorted = tuple(f for f in FAMILIES if f in skipped)
    return fitted.with_scores(integer=integer, rss=score, qq_r2=r2, skipped=skipped_sorted)


@dataclass
class CohortModel:
    """Cluster weights plus one fitted marginal per (cluster, attribute)."""

    weights: np.ndarray
    attributes: tuple[str, ...]
    clusters: list[dict[str, FittedDistribution]]
    sizes: tuple[int, ...] = ()
    labels: dict[int, str] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.attributes = tuple(self.attributes)
        if len(self.clusters) != len(self.weights):
            raise ValueError("one distribution map per cluster is required")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("cluster weights must be nonnegative and sum to 1")
        for c, dists in enumerate(self.clusters):
            if set(dists) != set(self.attributes):
                raise ValueError(f"cluster {c} does not cover the model attributes")

    @property
    def k(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "schema": COHORT_SCHEMA_VERSION,
            "k": self.k,
            "weights": [float(w) for w in self.weights],
            "sizes": [int(s) for s in self.sizes],
            "attributes": list(self.attributes),
            "labels": None if self.labels is None else {str(k): v for k, v in sorted(self.labels.items())},
            "clusters": [
                {"attributes": {a: dists[a].to_dict() for a in self.attributes}}
                for dists in self.clusters
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CohortModel":
        if d.get("schema") != COHORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported cohort model schema {d.get('schema')!r}")
        model = cls(
            weights=np.array(d["weights"], dtype=float),
            attributes=tuple(d["attributes"]),
            clusters=[
                {a: FittedDistribution.from_dict(v) for a, v in c["attributes"].items()}
                for c in d["clusters"]
            ],
            sizes=tuple(d.get("sizes", ())),
            labels=None if d.get("labels") is None else {int(k): v for k, v in d["labels"].items()},
            metadata=dict(d.get("metadata", {})),
        )
        if model.k != d["k"]:
            raise ValueError("k does not match the number of clusters")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CohortModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def is_binary_column(name: str, values: np.ndarray) -> bool:
    return name in BOOLEAN_COLUMNS or bool(np.all((values == 0) | (values == 1)))


def is_count_column(values: np.ndarray) -> bool:
    return bool(np.all(values >= 0) and np.all(values == np.floor(values)))


def fit_cluster_model(
    table: FeatureMatrix,
    assignments,
    attributes: Sequence[str] | None = None,
    families: Iterable[str] = FAMILIES,
    bins: int | str = "auto",
    k: int | None = None,
    labels: Mapping[int, str] | None = None,
    metadata: Mapping | None = None,
) -> CohortModel:
    """Fit every (cluster, attribute) cell and weight clusters by their size.

    Binary columns are always bernoulli. Nonnegative integral columns are
    marked as counts so generation rounds them. Continuous cells with fewer
    than 30 members are flagged low-confidence.
    """
    assignments = np.asarray(assignments, dtype=int)
    if assignments.shape != (table.n_rows,):
        raise ValueError("assignments must cover every row")
    if table.n_rows == 0:
        raise ValueError("cannot fit an empty table")
    attributes = tuple(table.columns if attributes is None else attributes)
    missing = [a for a in attributes if a not in table.columns]
    if missing:
        raise KeyError(f"attributes not in table: {missing}")
    if np.any(assignments < 0):
        raise ValueError("negative cluster index")
    k = int(assignments.max()) + 1 if k is None else int(k)
    sizes = np.bincount(assignments, minlength=k)
    if len(sizes) > k:
        raise ValueError("assignment index exceeds k")
    if np.any(sizes == 0):
        raise ValueError(f"clusters without members: {np.flatnonzero(sizes == 0).tolist()}")
    families = tuple(families)
    kinds = {}
    for a in attributes:
        col = table.column(a)
        kinds[a] = ("binary" if is_binary_column(a, col) else
                    "count" if is_count_column(col) else "real")

    clusters = []
    for c in range(k):
        members = table.values[assignments == c]
        dists = {}
        for a in attributes:
            x = members[:, table.columns.index(a)]
            if kinds[a] == "binary":
                fitted = best_fit(x, ("bernoulli",), bins)
            else:
                fitted = best_fit(x, [f for f in families if f != "bernoulli"], bins,
                                  integer=kinds[a] == "count")
                notes = list(fitted.notes)
                low = fitted.low_confidence or x.size < MIN_CONFIDENT_SAMPLES
                if x.size < MIN_CONFIDENT_SAMPLES:
                    notes.append(f"only {x.size} samples")
                if fitted.qq_r2 is not None and fitted.qq_r2 < POOR_QQ_R2:
                    low = True
                    notes.append("poor probability-plot fit; a composite distribution may suit better")
                fitted = fitted.with_scores(low_confidence=low, notes=tuple(notes))
            dists[a] = fitted
        clusters.append(dists)
    return CohortModel(
        weights=sizes / sizes.sum(),
        attributes=attributes,
        clusters=clusters,
        sizes=tuple(int(s) for s in sizes),
        labels=None if labels is None else dict(labels),
        metadata=dict(metadata or {}),
    )


def qq_csv(samples, dist: FittedDistribution) -> str:
    points, r2 = qq_points(samples, dist)
    buf = io.StringIO()
    buf.write(f"# r2={r2!r}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["theoretical", "empirical"])
    for t, e in points:
        writer.writerow([repr(float(t)), repr(float(e))])
    return buf.getvalue()


def write_qq_exports(
    directory: str | Path, model: CohortModel, table: FeatureMatrix, assignments
) -> list[Path]:
    """One probability-plot CSV per (cluster, attribute)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    assignments = np.asarray(assignments, dtype=int)
    paths = []
    for c in range(model.k):
        members = table.values[assignments == c]
        for a in model.attributes:
            path = directory / f"cluster{c}_{a}.csv"
            path.write_text(qq_csv(members[:, table.columns.index(a)], model.clusters[c][a]),
                            encoding="utf-8")
            paths.append(path)
    return paths
