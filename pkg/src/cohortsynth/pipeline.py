"""End-to-end run: ingest, PCA, attribute selection, clustering, fitting,
generation and validation, with a checksummed manifest.

Every stage has a function here that the matching CLI subcommand also
calls, so a subcommand run in isolation writes the same bytes as the
pipeline stage.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .cluster import MODEL_SCHEMA_VERSION, ClusterModel, archetype_labels, elbow_k, kmeans_fit, wcss_curve
from .distfit import COHORT_SCHEMA_VERSION, CohortModel, fit_cluster_model, write_qq_exports
from .distributions import FAMILIES
from .ingest import ingest_sources
from .pca import fit_pca, loadings, loadings_csv, scree_csv, select_attributes
from .synth import generate_cohort
from .table import FeatureMatrix, read_table_csv, write_assignments_csv
from .validate import REPORT_SCHEMA_VERSION, Thresholds, compare_cohorts

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = "pipeline-manifest/1"
SCHEMA_VERSIONS = {
    "cluster_model": MODEL_SCHEMA_VERSION,
    "cohort_model": COHORT_SCHEMA_VERSION,
    "validation_report": REPORT_SCHEMA_VERSION,
    "manifest": MANIFEST_SCHEMA_VERSION,
}

DEFAULT_CONFIG = {
    "inputs": [],
    "snapshot_date": None,
    "pca": {"standardize": False, "components": 3, "scaled_loadings": False},
    "selection": {"threshold": 1e-3, "top_m": 5, "attributes": None},
    "cluster": {
        "k": 4,
        "seed": 0,
        "restarts": 10,
        "transform": "log1p+zscore",
        "init": "k-means++",
        "elbow": [1, 8],
    },
    "fit": {"families": list(FAMILIES), "bins": "auto", "attributes": None},
    "generate": {"n": None, "seed": 0},
    "validate": {"alpha": 0.01, "qq_r2_min": 0.98, "proportion_tol": 0.01, "correction": "none"},
}


class ConfigError(ValueError):
    pass


def _merge(defaults: Mapping, given: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(dict(defaults))
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{path}{key} must be a mapping")
            out[key] = _merge(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    """Fully defaulted pipeline settings; ``base_dir`` resolves relative input paths."""

    settings: dict
    base_dir: Path = Path(".")
    output_dir: Path | None = None

    @classmethod
    def from_mapping(cls, given: Mapping, base_dir: str | Path = ".") -> "PipelineConfig":
        given = dict(given)
        # The output location is not part of the run's identity, so it is
        # kept out of the echoed settings and the config hash.
        out = given.pop("output_dir", None)
        settings = _merge(DEFAULT_CONFIG, given)
        cfg = cls(settings, Path(base_dir), Path(base_dir) / out if out else None)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            given = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(given, path.parent)

    def check(self) -> None:
        s = self.settings
        inputs = s["inputs"]
        if not inputs:
            raise ConfigError("config lists no inputs")
        if len(set(inputs)) != len(inputs):
            raise ConfigError("input paths must be distinct")
        if self.output_dir is not None and any(
            (self.base_dir / p).resolve() == self.output_dir.resolve() for p in inputs
        ):
            raise ConfigError("output_dir must differ from every input path")
        for section, key in (("cluster", "seed"), ("generate", "seed")):
            if not isinstance(s[section][key], int) or isinstance(s[section][key], bool):
                raise ConfigError(f"{section}.{key} must be an explicit integer")
        if s["snapshot_date"] is not None:
            try:
                date.fromisoformat(s["snapshot_date"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"snapshot_date must be YYYY-MM-DD: {exc}") from exc

    @property
    def input_paths(self) -> list[Path]:
        return [self.base_dir / p for p in self.settings["inputs"]]

    def canonical_json(self) -> str:
        return json.dumps(self.settings, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# -- stage functions shared with the CLI -----------------------------------

def stage_ingest(inputs: Sequence[str | Path], snapshot: str | None, out_csv: Path, report_json: Path):
    table, report = ingest_sources(list(inputs), date.fromisoformat(snapshot) if snapshot else None)
    table.write_csv(out_csv)
    _write_json(report_json, {**report.as_dict(),
                              "snapshot_date": table.snapshot_date.isoformat() if table.snapshot_date else None})
    return table, report


def read_attributes(path: str | Path) -> FeatureMatrix:
    return read_table_csv(path, drop=("cluster_label",))[0]


def stage_pca(table: FeatureMatrix, standardize: bool, components: int, scaled: bool,
              loadings_out: Path, scree_out: Path):
    model = fit_pca(table, standardize=standardize, n_components=min(components, len(table.columns)))
    table_l = loadings(model, scaled=scaled)
    loadings_out.write_bytes(loadings_csv(table_l).encode("utf-8"))
    scree_out.write_bytes(scree_csv(model).encode("utf-8"))
    return model, table_l


def stage_cluster(table: FeatureMatrix, attributes: Sequence[str], k: int, seed: int, restarts: int,
                  transform: str, init: str, elbow: Sequence[int] | None,
                  model_out: Path, assignments_out: Path) -> ClusterModel:
    data = table.select(list(attributes))
    model = kmeans_fit(data, k, seed=seed, restarts=restarts, transform=transform, init=init)
    if elbow:
        k_lo, k_hi = int(elbow[0]), min(int(elbow[1]), data.n_rows)
        if k_hi > k_lo:
            curve = wcss_curve(data, k_lo, k_hi, seed=seed, restarts=restarts, transform=transform)
            model.elbow = {**curve.to_dict(),
                           "elbow_k": elbow_k(curve) if len(curve.ks) >= 3 else None}
    model.save(model_out)
    write_assignments_csv(assignments_out, data.ids, model.assignments)
    return model


def align_assignments(table: FeatureMatrix, mapping: Mapping[str, int]) -> np.ndarray:
    try:
        return np.array([mapping[uid] for uid in table.ids], dtype=int)
    except KeyError as exc:
        raise ValueError(f"no cluster assignment for user {exc.args[0]}") from None


def stage_fit(table: FeatureMatrix, assignments: np.ndarray, attributes: Sequence[str] | None,
              families: Sequence[str], bins, model_out: Path, qq_dir: Path | None,
              metadata: Mapping | None = None) -> CohortModel:
    k = int(np.max(assignments)) + 1
    meta = {"families": list(families), "bins": bins, **(metadata or {})}
    model = fit_cluster_model(
        table, assignments, attributes, families, bins, k=k,
        labels=archetype_labels(assignments, table, k), metadata=meta,
    )
    model.save(model_out)
    if qq_dir is not None:
        write_qq_exports(qq_dir, model, table, assignments)
    return model


def stage_generate(model: CohortModel, n: int, seed: int, out_csv: Path):
    cohort = generate_cohort(model, n, seed)
    cohort.write_csv(out_csv)
    return cohort


def stage_validate(original: FeatureMatrix, assignments: np.ndarray, generated_csv: Path,
                   model: CohortModel, thresholds: Thresholds, report_out: Path):
    generated, extra = read_table_csv(generated_csv, drop=("cluster_label",))
    labels = np.array([int(v) for v in extra["cluster_label"]], dtype=int)
    report = compare_cohorts(original, assignments, generated, labels, thresholds, model.attributes)
    report.save(report_out)
    return report


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class PipelineResult:
    exit_status: int
    output_dir: Path
    manifest: dict


STAGES = ("ingest", "pca", "select", "cluster", "fit", "generate", "validate")


def run_pipeline(config: PipelineConfig, output_dir: str | Path) -> PipelineResult:
    """Run every stage into ``output_dir``.

    Exit status 0 when validation passes, 1 when it fails, 2 when a stage
    raises. Partial artifacts stay on disk and ``manifest.json`` names the
    failing stage. Wall-clock timings go to ``timings.json`` so the
    manifest itself is reproducible.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = config.settings
    completed: list[str] = []
    timings: dict[str, float] = {}
    failed = None
    error = None
    passed = False
    state: dict = {}

    def run(name, fn):
        t0 = time.perf_counter()
        fn()
        timings[name] = round(time.perf_counter() - t0, 6)
        completed.append(name)

    def do_ingest():
        table, _ = stage_ingest(config.input_paths, s["snapshot_date"],
                                out / "attributes.csv", out / "ingest_report.json")
        state["snapshot"] = table.snapshot_date.isoformat() if table.snapshot_date else None
        state["table"] = read_attributes(out / "attributes.csv")

    def do_pca():
        state["loadings"] = stage_pca(state["table"], s["pca"]["standardize"], s["pca"]["components"],
                                      s["pca"]["scaled_loadings"], out / "pca_loadings.csv",
                                      out / "pca_scree.csv")[1]

    def do_select():
        sel = s["selection"]
        chosen = sel["attributes"] or select_attributes(state["loadings"], sel["threshold"], sel["top_m"])
        if not chosen:
            raise ValueError("attribute selection is empty")
        state["selected"] = list(chosen)
        _write_json(out / "selected_attributes.json",
                    {"attributes": state["selected"], "threshold": sel["threshold"], "top_m": sel["top_m"]})

    def do_cluster():
        c = s["cluster"]
        state["cluster"] = stage_cluster(state["table"], state["selected"], c["k"], c["seed"],
                                         c["restarts"], c["transform"], c["init"], c["elbow"],
                                         out / "cluster_model.json", out / "assignments.csv")

    def do_fit():
        f = s["fit"]
        c = s["cluster"]
        meta = {"snapshot_date": state["snapshot"], "transform": c["transform"],
                "cluster_seed": c["seed"], "cluster_attributes": state["selected"]}
        state["cohort"] = stage_fit(state["table"], state["cluster"].assignments, f["attributes"],
                                    f["families"], f["bins"], out / "cohort_model.json", out / "qq", meta)

    def do_generate():
        g = s["generate"]
        n = g["n"] or state["table"].n_rows
        stage_generate(state["cohort"], n, g["seed"], out / "synthetic.csv")

    def do_validate():
        nonlocal passed
        v = s["validate"]
        report = stage_validate(state["table"], state["cluster"].assignments, out / "synthetic.csv",
                                state["cohort"], Thresholds(**v), out / "validation_report.json")
        passed = report.passed

    steps = dict(zip(STAGES, (do_ingest, do_pca, do_select, do_cluster, do_fit, do_generate, do_validate)))
    for name in STAGES:
        try:
            run(name, steps[name])
        except Exception as exc:  # any stage failure is recorded, not propagated
            log.error("stage %s failed: %s", name, exc)
            failed, error = name, f"{type(exc).__name__}: {exc}"
            break

    exit_status = 2 if failed else (0 if passed else 1)
    artifacts = {
        p.relative_to(out).as_posix(): sha256_file(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name not in ("manifest.json", "timings.json")
    }
    manifest = {
        "schema": MANIFEST_SCHEMA_VERSION,
        "package_version": __version__,
        "schema_versions": SCHEMA_VERSIONS,
        "config": s,
        "config_sha256": config.digest(),
        "seeds": {"cluster": s["cluster"]["seed"], "generate": s["generate"]["seed"]},
        "stages_completed": completed,
        "failed_stage": failed,
        "error": error,
        "validation_passed": passed if not failed else None,
        "exit_status": exit_status,
        "artifacts": artifacts,
    }
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timings.json", timings)
    return PipelineResult(exit_status, out, manifest)
