"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``.

Exit status 0 means success (or a passing validation), 1 a failing
validation, 2 an input or stage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .cluster import TRANSFORM_KINDS, ClusterModel
from .distfit import CohortModel
from .distributions import FAMILIES
from .pipeline import (
    SCHEMA_VERSIONS,
    PipelineConfig,
    align_assignments,
    read_attributes,
    run_pipeline,
    stage_cluster,
    stage_fit,
    stage_generate,
    stage_ingest,
    stage_pca,
    stage_validate,
)
from .table import read_assignments_csv
from .validate import Thresholds

log = logging.getLogger("cohortsynth")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected kmin..kmax, got {text!r}") from None
    if not 1 <= lo < hi:
        raise argparse.ArgumentTypeError(f"need 1 <= kmin < kmax, got {text!r}")
    return lo, hi


def _bins(text: str):
    return text if text == "auto" else int(text)


def cmd_ingest(args) -> int:
    report_out = args.report_out or Path(args.output).with_suffix(".report.json")
    _, report = stage_ingest(args.input, args.snapshot_date, Path(args.output), Path(report_out))
    log.info("%s", report.as_dict())
    return 0


def cmd_pca(args) -> int:
    table = read_attributes(args.input)
    stage_pca(table, args.standardize, args.components, args.scaled,
              Path(args.loadings_out), Path(args.scree_out))
    return 0


def cmd_cluster(args) -> int:
    table = read_attributes(args.input)
    stage_cluster(table, args.attributes, args.k, args.seed, args.restarts, args.transform,
                  args.init, args.elbow, Path(args.model_out), Path(args.assignments_out))
    return 0


def cmd_fit(args) -> int:
    table = read_attributes(args.input)
    labels = align_assignments(table, read_assignments_csv(args.assignments))
    meta = {}
    if args.cluster_model:
        cm = ClusterModel.load(args.cluster_model)
        kinds = set(cm.transform.kinds)
        meta = {"snapshot_date": args.snapshot_date,
                "transform": kinds.pop() if len(kinds) == 1 else list(cm.transform.kinds),
                "cluster_seed": cm.seed, "cluster_attributes": list(cm.attributes)}
    elif args.snapshot_date:
        meta = {"snapshot_date": args.snapshot_date}
    stage_fit(table, labels, args.attributes, args.families, args.bins, Path(args.model_out),
              Path(args.qq_out) if args.qq_out else None, meta)
    return 0


def cmd_generate(args) -> int:
    stage_generate(CohortModel.load(args.model), args.n, args.seed, Path(args.output))
    return 0


def _thresholds(args) -> Thresholds:
    return Thresholds(alpha=args.alpha, qq_r2_min=args.qq_r2_min,
                      proportion_tol=args.proportion_tol, correction=args.correction)


def cmd_validate(args) -> int:
    original = read_attributes(args.original)
    labels = align_assignments(original, read_assignments_csv(args.assignments))
    report = stage_validate(original, labels, Path(args.generated), CohortModel.load(args.model),
                            _thresholds(args), Path(args.report_out))
    print(f"validation {'passed' if report.passed else 'failed'}: "
          f"KS pass rate {report.ks_pass_rate:.3f} over {len(report.cells)} cells")
    return 0 if report.passed else 1


def cmd_pipeline(args) -> int:
    config = PipelineConfig.load(args.config)
    out = args.output_dir or config.output_dir
    if out is None:
        raise ValueError("no output directory: pass --output-dir or set output_dir in the config")
    result = run_pipeline(config, out)
    m = result.manifest
    status = "failed at " + m["failed_stage"] if m["failed_stage"] else (
        "validation passed" if m["validation_passed"] else "validation failed")
    print(f"pipeline {status}; artifacts in {result.output_dir}")
    return result.exit_status


def build_parser() -> argparse.ArgumentParser:
    versions = " ".join(f"{k}={v}" for k, v in SCHEMA_VERSIONS.items())
    p = argparse.ArgumentParser(prog="cohortsynth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cohortsynth {__version__} {versions}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="tweet archives -> attribute CSV")
    s.add_argument("--input", nargs="+", required=True, help="NDJSON files, plain or gzip")
    s.add_argument("--snapshot-date", default=None, help="YYYY-MM-DD; default latest observation")
    s.add_argument("--output", required=True)
    s.add_argument("--report-out", default=None, help="ingest report JSON (default next to output)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("pca", help="attribute CSV -> loadings and scree CSVs")
    s.add_argument("--input", required=True)
    s.add_argument("--standardize", type=_bool, default=False)
    s.add_argument("--components", type=int, default=3)
    s.add_argument("--scaled", action="store_true", help="scale loadings by sqrt(eigenvalue)")
    s.add_argument("--loadings-out", required=True)
    s.add_argument("--scree-out", required=True)
    s.set_defaults(func=cmd_pca)

    s = sub.add_parser("cluster", help="K-means on selected attributes")
    s.add_argument("--input", required=True)
    s.add_argument("--attributes", type=_list, required=True)
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--transform", choices=TRANSFORM_KINDS, default="log1p+zscore")
    s.add_argument("--init", choices=("k-means++", "random"), default="k-means++")
    s.add_argument("--elbow", type=_range, default=None, help="kmin..kmax for the advisory WCSS curve")
    s.add_argument("--model-out", required=True)
    s.add_argument("--assignments-out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("fit", help="per-cluster distribution fitting -> cohort model JSON")
    s.add_argument("--input", required=True)
    s.add_argument("--assignments", required=True)
    s.add_argument("--attributes", type=_list, default=None, help="default: every column")
    s.add_argument("--families", type=_list, default=list(FAMILIES))
    s.add_argument("--bins", type=_bins, default="auto")
    s.add_argument("--cluster-model", default=None, help="record its transform and seed in metadata")
    s.add_argument("--snapshot-date", default=None, help="recorded in metadata")
    s.add_argument("--model-out", required=True)
    s.add_argument("--qq-out", default=None, help="directory for Q-Q CSV exports")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("generate", help="cohort model -> synthetic users CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("validate", help="compare original and generated cohorts")
    s.add_argument("--original", required=True)
    s.add_argument("--assignments", required=True)
    s.add_argument("--generated", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--report-out", required=True)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--qq-r2-min", type=float, default=0.98)
    s.add_argument("--proportion-tol", type=float, default=0.01)
    s.add_argument("--correction", choices=("none", "bonferroni"), default="none")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("pipeline", help="run every stage from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir", default=None)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"cohortsynth {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
