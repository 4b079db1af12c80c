"""Report documents and delimited summaries.

Everything here is a pure function of the results, with sorted keys and no
timestamps, so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Mapping, Sequence

from .cohort_io import atomic_write_text
from .metrics import METRIC_NAMES

REPORT_VERSION = 1


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def build_report(fingerprint: str, config: dict, experiments: Sequence[dict], extras: Mapping | None = None) -> dict:
    """Top-level report: config, fingerprint and one entry per experiment."""
    doc = {
        "report_version": REPORT_VERSION,
        "fingerprint": fingerprint,
        "config": config,
        "experiments": list(experiments),
    }
    if extras:
        doc.update(extras)
    return doc


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def summary_csv(experiments: Sequence[dict]) -> str:
    """One row per configuration; ``mean`` and ``std`` column plus a ``mean ± std`` cell per metric."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["configuration", "n_subjects", "n_units"]
    for m in METRIC_NAMES:
        header += [f"{m}_mean", f"{m}_std", m]
    writer.writerow(header)
    for exp in experiments:
        row = [exp["name"], exp["meta"]["n_subjects"], len(exp["folds"])]
        for m in METRIC_NAMES:
            agg = exp["aggregate"][m]
            row += [repr(agg["mean"]), repr(agg["std"]), f"{_fmt(agg['mean'])} ± {_fmt(agg['std'])}"]
        writer.writerow(row)
    return buf.getvalue()


def folds_csv(experiments: Sequence[dict]) -> str:
    """Long format: one row per (configuration, seed, fold, metric)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["configuration", "seed", "fold", "metric", "value"])
    for exp in experiments:
        for rec in sorted(exp["folds"], key=lambda r: (r["seed"], r["fold"])):
            for m in METRIC_NAMES:
                writer.writerow([exp["name"], rec["seed"], rec["fold"], m, repr(rec[m])])
    return buf.getvalue()


def subgroup_csv(subgroups: Mapping[str, dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subgroup", "n", "n_pos", "auroc_mean", "auroc_std"])
    for name, entry in subgroups.items():
        a = entry["auroc"]
        if a == "undefined":
            writer.writerow([name, entry["n"], entry["n_pos"], "undefined", "undefined"])
        else:
            writer.writerow([name, entry["n"], entry["n_pos"], repr(a["mean"]), repr(a["std"])])
    return buf.getvalue()


def write_report_files(out_dir, stem: str, report: dict) -> list:
    """Write ``{stem}.json``, ``{stem}_summary.csv`` and ``{stem}_folds.csv`` atomically."""
    out = Path(out_dir)
    paths = [out / f"{stem}.json", out / f"{stem}_summary.csv", out / f"{stem}_folds.csv"]
    atomic_write_text(paths[0], dumps_report(report))
    atomic_write_text(paths[1], summary_csv(report["experiments"]))
    atomic_write_text(paths[2], folds_csv(report["experiments"]))
    if report.get("subgroups"):
        paths.append(out / f"{stem}_subgroups.csv")
        atomic_write_text(paths[-1], subgroup_csv(report["subgroups"]))
    return paths


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "experiments" not in doc:
        raise ValueError(f"{path} is not a report document")
    return doc
