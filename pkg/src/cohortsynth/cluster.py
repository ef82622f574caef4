"""K-means clustering of user attributes.

Lloyd iterations from k-means++ (or uniform) seeding, best of several
seeded restarts, plus the WCSS curve / elbow tools used to pick K and the
rule-based archetype naming of a four-cluster solution.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .table import FeatureMatrix

log = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = "cluster-model/1"
TRANSFORM_KINDS = ("raw", "log1p", "zscore", "log1p+zscore")
ARCHETYPES = ("Influencers", "Standard users", "Sharers", "Lurkers")


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureTransform:
    """Per-column ``log1p`` and/or z-score, with parameters fitted on training data."""

    columns: tuple[str, ...]
    kinds: tuple[str, ...]
    means: np.ndarray
    scales: np.ndarray
    zero_variance: tuple[str, ...] = ()

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        for j, kind in enumerate(self.kinds):
            if "log1p" in kind:
                if np.any(x[..., j] < 0):
                    raise ContractError(f"log1p on negative values in column {self.columns[j]}")
                x[..., j] = np.log1p(x[..., j])
            if "zscore" in kind:
                x[..., j] = (x[..., j] - self.means[j]) / self.scales[j]
        return x

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.array(z, dtype=float)
        for j, kind in enumerate(self.kinds):
            if "zscore" in kind:
                z[..., j] = z[..., j] * self.scales[j] + self.means[j]
            if "log1p" in kind:
                z[..., j] = np.expm1(z[..., j])
        return z

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "kinds": list(self.kinds),
            "means": [float(v) for v in self.means],
            "scales": [float(v) for v in self.scales],
            "zero_variance": list(self.zero_variance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureTransform":
        return cls(
            tuple(d["columns"]),
            tuple(d["kinds"]),
            np.array(d["means"], dtype=float),
            np.array(d["scales"], dtype=float),
            tuple(d.get("zero_variance", ())),
        )


def fit_transform_spec(
    table: FeatureMatrix, spec: str | Mapping[str, str] = "raw"
) -> FeatureTransform:
    """Fit a transform; ``spec`` is one kind for every column or a per-column mapping."""
    if isinstance(spec, str):
        kinds = tuple(spec for _ in table.columns)
    else:
        kinds = tuple(spec.get(c, "raw") for c in table.columns)
    for k in kinds:
        if k not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {k!r}; expected one of {TRANSFORM_KINDS}")
    d = len(table.columns)
    log_kinds = tuple("log1p" if "log1p" in k else "raw" for k in kinds)
    staged = FeatureTransform(table.columns, log_kinds, np.zeros(d), np.ones(d))
    x = staged.apply(table.values)
    means = np.zeros(d)
    scales = np.ones(d)
    flagged = []
    for j, kind in enumerate(kinds):
        if "zscore" not in kind:
            continue
        means[j] = x[:, j].mean()
        sd = x[:, j].std(ddof=0)
        if sd == 0:
            flagged.append(table.columns[j])
        else:
            scales[j] = sd
    return FeatureTransform(table.columns, kinds, means, scales, tuple(flagged))


def transform_features(
    table: FeatureMatrix, spec: str | Mapping[str, str] = "log1p+zscore"
) -> tuple[FeatureMatrix, FeatureTransform]:
    tf = fit_transform_spec(table, spec)
    return FeatureMatrix(tf.apply(table.values), table.columns, table.ids), tf


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # transformed space, shape (k, d)
    transform: FeatureTransform
    assignments: np.ndarray | None
    wcss: float
    iterations_run: int
    seed: int
    restarts: int = 1
    init: str = "k-means++"
    wcss_history: list[float] = field(default_factory=list)
    converged: bool = True
    reseeded_last: bool = False
    elbow: dict | None = None

    @property
    def attributes(self) -> tuple[str, ...]:
        return self.transform.columns

    @property
    def raw_centroids(self) -> np.ndarray:
        return self.transform.inverse(self.centroids)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Cluster index of every raw-space row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.centroids.shape[1]:
            raise ContractError(
                f"point dimension {x.shape[1]} does not match model dimension {self.centroids.shape[1]}"
            )
        return _nearest(self.transform.apply(x), self.centroids)[0]

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA_VERSION,
            "k": self.k,
            "seed": self.seed,
            "restarts": self.restarts,
            "init": self.init,
            "wcss": float(self.wcss),
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "attributes": list(self.attributes),
            "transform": self.transform.to_dict(),
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "raw_centroids": [[float(v) for v in row] for row in self.raw_centroids],
            "elbow": self.elbow,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterModel":
        if d.get("schema") != MODEL_SCHEMA_VERSION:
            raise ContractError(f"unsupported cluster model schema {d.get('schema')!r}")
        return cls(
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=float),
            transform=FeatureTransform.from_dict(d["transform"]),
            assignments=None,
            wcss=float(d["wcss"]),
            iterations_run=int(d["iterations_run"]),
            seed=int(d["seed"]),
            restarts=int(d.get("restarts", 1)),
            init=d.get("init", "k-means++"),
            converged=bool(d.get("converged", True)),
            elbow=d.get("elbow"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _nearest(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = _sq_distances(x, c)
    # argmin picks the first minimum, i.e. the lowest cluster index on ties.
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(x)), labels]


def _wcss(x: np.ndarray, c: np.ndarray, labels: np.ndarray) -> float:
    diff = x - c[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def _update(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, bool]:
    """Means of members; an empty cluster moves to the point farthest from its centroid."""
    k = len(centroids)
    new = centroids.copy()
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        if counts[j]:
            new[j] = x[labels == j].mean(axis=0)
    empty = np.flatnonzero(counts == 0)
    if len(empty) == 0:
        return new, False
    dist = np.sum((x - new[labels]) ** 2, axis=1)
    order = np.argsort(-dist, kind="stable")
    taken = set()
    pos = 0
    for j in empty:
        while int(order[pos]) in taken:
            pos += 1
        idx = int(order[pos])
        taken.add(idx)
        new[j] = x[idx]
    return new, True


@dataclass
class _Run:
    centroids: np.ndarray
    labels: np.ndarray
    wcss: float
    iterations: int
    history: list[float]
    converged: bool
    reseeded_last: bool


def _lloyd(
    x: np.ndarray, k: int, rng: np.random.Generator, init: str, tol: float, max_iter: int
) -> _Run:
    if init == "k-means++":
        centroids = _kmeanspp(x, k, rng)
    elif init == "random":
        centroids = x[rng.choice(len(x), size=k, replace=False)].copy()
    else:
        raise ValueError(f"unknown init {init!r}")
    history: list[float] = []
    labels = _nearest(x, centroids)[0]
    converged = False
    reseeded = False
    it = 0
    while it < max_iter:
        it += 1
        centroids, reseeded = _update(x, labels, centroids)
        w = _wcss(x, centroids, labels)
        history.append(w)
        new_labels = _nearest(x, centroids)[0]
        if np.array_equal(new_labels, labels):
            converged = True
            break
        stalled = len(history) > 1 and history[-2] - w <= tol * history[-2]
        labels = new_labels
        if stalled:
            # Settle the pending reassignment so centroids stay member means.
            centroids, reseeded = _update(x, labels, centroids)
            history.append(_wcss(x, centroids, labels))
            converged = np.array_equal(_nearest(x, centroids)[0], labels)
            break
    return _Run(centroids, labels, _wcss(x, centroids, labels), it, history, converged, reseeded)


def kmeans_fit(
    data: FeatureMatrix | np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    transform: str | Mapping[str, str] = "raw",
    init: str = "k-means++",
    tol: float = 1e-6,
    max_iter: int = 300,
) -> ClusterModel:
    """Best-of-``restarts`` Lloyd k-means.

    Each restart draws from its own child of ``SeedSequence(seed)``, so the
    result is a pure function of the arguments. Ties in final WCSS go to
    the earliest restart.
    """
    if not isinstance(data, FeatureMatrix):
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        data = FeatureMatrix(arr, tuple(f"x{i}" for i in range(arr.shape[1])))
    n = data.n_rows
    if k < 1 or k > n:
        raise DimensionError(f"k must be in [1, {n}], got {k}")
    if restarts < 1:
        raise ValueError("restarts must be positive")
    if not np.all(np.isfinite(data.values)):
        raise ContractError("data contains non-finite values")
    tf = fit_transform_spec(data, transform)
    x = tf.apply(data.values)
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        run = _lloyd(x, k, np.random.default_rng(child), init, tol, max_iter)
        if best is None or run.wcss < best.wcss:
            best = run
    return ClusterModel(
        k=k,
        centroids=best.centroids,
        transform=tf,
        assignments=best.labels,
        wcss=best.wcss,
        iterations_run=best.iterations,
        seed=seed,
        restarts=restarts,
        init=init,
        wcss_history=best.history,
        converged=best.converged,
        reseeded_last=best.reseeded_last,
    )


def assign(model: ClusterModel, point: Sequence[float]) -> int:
    point = np.asarray(point, dtype=float)
    if point.ndim != 1:
        raise ContractError("assign expects a single point")
    return int(model.predict(point[None, :])[0])


@dataclass(frozen=True)
class WcssCurve:
    ks: tuple[int, ...]
    wcss: tuple[float, ...]

    def __post_init__(self):
        if len(self.ks) != len(self.wcss):
            raise ValueError("ks and wcss differ in length")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("k values must be strictly increasing")

    def to_dict(self) -> dict:
        return {"k": list(self.ks), "wcss": [float(w) for w in self.wcss]}


def wcss_curve(
    data: FeatureMatrix | np.ndarray,
    k_min: int,
    k_max: int,
    seed: int = 0,
    restarts: int = 10,
    transform: str | Mapping[str, str] = "raw",
) -> WcssCurve:
    n = data.n_rows if isinstance(data, FeatureMatrix) else len(data)
    if not 1 <= k_min < k_max <= n:
        raise DimensionError(f"need 1 <= k_min < k_max <= {n}, got {k_min}..{k_max}")
    ks = tuple(range(k_min, k_max + 1))
    values = tuple(kmeans_fit(data, k, seed, restarts, transform).wcss for k in ks)
    return WcssCurve(ks, values)


def elbow_k(curve: WcssCurve) -> int:
    """Knee of a WCSS curve: the point farthest from the first-to-last chord.

    Ties, including the all-zero distances of a straight line, go to the smaller k.
    """
    if len(curve.ks) < 3:
        raise ContractError("elbow detection needs at least 3 points")
    k = np.asarray(curve.ks, dtype=float)
    w = np.asarray(curve.wcss, dtype=float)
    dx, dy = k[-1] - k[0], w[-1] - w[0]
    norm = np.hypot(dx, dy)
    dist = np.abs(dy * (k - k[0]) - dx * (w - w[0])) / norm
    return int(curve.ks[int(np.argmax(dist))])


def cluster_means(assignments: np.ndarray, table: FeatureMatrix, k: int) -> np.ndarray:
    means = np.full((k, len(table.columns)), np.nan)
    for j in range(k):
        members = table.values[assignments == j]
        if len(members):
            means[j] = members.mean(axis=0)
    return means


def label_clusters(
    model: ClusterModel, table: FeatureMatrix, assignments: np.ndarray | None = None
) -> dict[int, str]:
    """Archetype names for a fitted model's clusters; see :func:`archetype_labels`."""
    if assignments is None:
        assignments = model.assignments
    if assignments is None:
        assignments = model.predict(table.select(model.attributes).values)
    return archetype_labels(assignments, table, model.k)


def archetype_labels(assignments, table: FeatureMatrix, k: int) -> dict[int, str]:
    """Name the clusters of a K=4 solution after the Twitter user archetypes.

    Uses raw-space member means: Influencers have the most followers, Sharers
    the most statuses among the rest, Lurkers the most favourites among the
    remaining two (fewer statuses breaks a tie), Standard users are left over.
    Other K, or tables missing those columns, get ``cluster-i`` names.
    """
    generic = {j: f"cluster-{j}" for j in range(k)}
    needed = ("followers_count", "statuses_count", "favourites_count")
    if k != 4 or any(c not in table.columns for c in needed):
        return generic
    means = cluster_means(np.asarray(assignments), table, k)
    col = {c: table.columns.index(c) for c in needed}

    def mean_of(j, name):
        v = means[j, col[name]]
        return -np.inf if np.isnan(v) else v

    def pick(candidates, key):
        return min(candidates, key=lambda j: (key(j), j))

    remaining = list(range(4))
    influencers = pick(remaining, lambda j: -mean_of(j, "followers_count"))
    remaining.remove(influencers)
    sharers = pick(remaining, lambda j: -mean_of(j, "statuses_count"))
    remaining.remove(sharers)
    lurkers = pick(
        remaining, lambda j: (-mean_of(j, "favourites_count"), mean_of(j, "statuses_count"))
    )
    remaining.remove(lurkers)
    return {
        influencers: "Influencers",
        remaining[0]: "Standard users",
        sharers: "Sharers",
        lurkers: "Lurkers",
    }
