"""Principal component analysis for attribute evaluation.

The eigensystem is computed with cyclic Jacobi rotations, which are exact
enough for the handful of attributes a user table carries and keep the
whole decomposition inspectable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .table import FeatureMatrix

SYMMETRY_TOL = 1e-9


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class CovarianceResult:
    matrix: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    zero_variance: tuple[str, ...]


def covariance_matrix(table: FeatureMatrix | np.ndarray, standardize: bool = False) -> CovarianceResult:
    """Sample covariance (n - 1 denominator) of the centered columns.

    With ``standardize`` the columns are also divided by their sample
    standard deviation, giving the correlation matrix. Zero-variance columns
    keep a scale of 1 and are reported in ``zero_variance``.
    """
    if isinstance(table, FeatureMatrix):
        x, names = table.values, table.columns
    else:
        x = np.asarray(table, dtype=float)
        names = tuple(str(i) for i in range(x.shape[1]))
    n = x.shape[0]
    if n < 2:
        raise DimensionError(f"covariance needs at least 2 rows, got {n}")
    if not np.all(np.isfinite(x)):
        raise ContractError("table contains missing or non-finite entries")
    mean = x.mean(axis=0)
    centered = x - mean
    scale = np.ones(x.shape[1])
    flagged: tuple[str, ...] = ()
    if standardize:
        std = centered.std(axis=0, ddof=1)
        zero = std == 0
        flagged = tuple(name for name, z in zip(names, zero) if z)
        scale = np.where(zero, 1.0, std)
        centered = centered / scale
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2
    return CovarianceResult(cov, mean, scale, flagged)


def _off_diagonal_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def eigendecomposition_symmetric(
    m: np.ndarray, rel_tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of a symmetric matrix.

    Cyclic Jacobi: sweeps over every off-diagonal pair, annihilating each
    with a plane rotation, until the off-diagonal Frobenius norm falls below
    ``rel_tol`` times the initial Frobenius norm or ``max_sweeps`` is hit.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("matrix has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL:
        raise ContractError("matrix is not symmetric")
    a = (a + a.T) / 2
    d = a.shape[0]
    v = np.eye(d)
    target = rel_tol * np.linalg.norm(a)

    for _ in range(max_sweeps):
        if _off_diagonal_norm(a) <= target:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                # Rotation angle from the stable tangent formula.
                theta = float(a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    for j in range(d):
        col = vectors[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            vectors[:, j] = -col
    return values, vectors


@dataclass(frozen=True)
class PcaModel:
    """Fitted PCA.

    ``eigenvalues`` holds the full spectrum; ``components`` only the retained
    rows (one unit vector per row).
    """

    column_names: tuple[str, ...]
    mean_vector: np.ndarray
    scale_vector: np.ndarray
    eigenvalues: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    standardized: bool
    zero_variance: tuple[str, ...] = ()

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, dtype=float) - self.mean_vector) / self.scale_vector) @ self.components.T

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return (np.asarray(scores) @ self.components) * self.scale_vector + self.mean_vector


def fit_pca(
    table: FeatureMatrix | np.ndarray, standardize: bool = False, n_components: int = 3
) -> PcaModel:
    if isinstance(table, FeatureMatrix):
        names = table.columns
    else:
        names = tuple(f"x{i}" for i in range(np.asarray(table).shape[1]))
    d = len(names)
    if n_components < 1 or n_components > d:
        raise DimensionError(f"n_components must be in [1, {d}], got {n_components}")
    cov = covariance_matrix(table, standardize)
    values, vectors = eigendecomposition_symmetric(cov.matrix)
    # Round-off can leave tiny negative eigenvalues on rank-deficient data.
    floor = 1e-12 * max(1.0, float(np.max(np.abs(values), initial=0.0)))
    values = np.where((values < 0) & (values > -floor), 0.0, values)
    total = float(np.sum(values))
    ratios = values[:n_components] / total if total > 0 else np.zeros(n_components)
    return PcaModel(
        column_names=tuple(names),
        mean_vector=cov.mean,
        scale_vector=cov.scale,
        eigenvalues=values,
        components=vectors[:, :n_components].T.copy(),
        explained_variance_ratio=ratios,
        standardized=standardize,
        zero_variance=cov.zero_variance,
    )


@dataclass(frozen=True)
class LoadingsTable:
    attributes: tuple[str, ...]
    components: tuple[str, ...]
    values: np.ndarray  # shape (attributes, components)


def loadings(model: PcaModel, scaled: bool = False) -> LoadingsTable:
    """Attribute loadings per component.

    Raw component coordinates by default; ``scaled`` multiplies each
    component by the square root of its eigenvalue.
    """
    vals = model.components.T.copy()
    if scaled:
        vals = vals * np.sqrt(np.maximum(model.eigenvalues[: model.n_components], 0.0))
    labels = tuple(f"PC{i + 1}" for i in range(model.n_components))
    return LoadingsTable(model.column_names, labels, vals)


def select_attributes(
    table: LoadingsTable, threshold: float = 1e-3, top_m: int = 5
) -> list[str]:
    """Rank attributes by their largest absolute loading over the retained components.

    Attributes at or below ``threshold`` are dropped; ties keep the table's row order.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    strength = np.max(np.abs(table.values), axis=1) if table.values.size else np.zeros(0)
    keep = [i for i in range(len(table.attributes)) if strength[i] > threshold]
    keep.sort(key=lambda i: (-strength[i], i))
    return [table.attributes[i] for i in keep[:top_m]]


def loadings_csv(table: LoadingsTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["attribute", *table.components])
    for name, row in zip(table.attributes, table.values):
        writer.writerow([name, *(f"{v:.6e}" for v in row)])
    return buf.getvalue()


def scree_csv(model: PcaModel) -> str:
    total = float(np.sum(model.eigenvalues))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["component", "eigenvalue", "explained_variance_ratio", "cumulative_ratio"])
    cum = 0.0
    for i, lam in enumerate(model.eigenvalues):
        ratio = lam / total if total > 0 else 0.0
        cum += ratio
        writer.writerow([f"PC{i + 1}", f"{lam:.6e}", f"{ratio:.6e}", f"{cum:.6e}"])
    return buf.getvalue()


def eigenvalue_criterion(model: PcaModel) -> int:
    """Number of eigenvalues above the mean eigenvalue (Kaiser's rule on correlation PCA)."""
    return int(np.sum(model.eigenvalues > np.mean(model.eigenvalues)))


def write_text(path: str | Path, text: str) -> None:
    Path(path).write_bytes(text.encode("utf-8"))


def read_loadings_csv(path: str | Path) -> LoadingsTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return LoadingsTable(
        tuple(r[0] for r in body),
        tuple(header[1:]),
        np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1),
    )

