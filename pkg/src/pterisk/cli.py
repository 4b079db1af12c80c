"""Command-line entry point: ``pterisk <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 embedding
backend error.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cohort import Cohort, CohortError, apply_inclusion
from .cohort_io import atomic_write_text, load_cohort, write_cohort
from .config import QUICK_SEEDS, ConfigError, RunConfig, load_config, merge
from .embedder import BackendDescriptor, BackendError, Embedder, EmbeddingCache
from .evaluation import (
    ExperimentError,
    ExperimentSpec,
    PreparedCohort,
    ablation_suite,
    imaging_notes_analysis,
    permutation_baseline,
    run_spec,
    single_aspect_experiment,
    subgroup_eval,
)
from .metrics import MetricError
from .reports import build_report, load_report, summary_csv, write_report_files
from .serializer import ASPECTS, dump_paragraphs, load_paragraphs, paragraph_records
from .synthetic import GeneratorConfig, generate_synthetic_cohort

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4

log = logging.getLogger("pterisk")


def _say(msg: str):
    print(msg, flush=True)


def _resolve_config(args) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else None
    overrides = {}
    if getattr(args, "cohort", None):
        overrides["cohort"] = {"kind": "file", "path": args.cohort, "format": args.cohort_format}
    for flag, key in (
        ("strategy", "strategy"),
        ("pooling", "pooling"),
        ("k", "k"),
        ("out", "output_dir"),
        ("cache_dir", "cache_dir"),
        ("jobs", "jobs"),
        ("early_stopping", "early_stopping"),
    ):
        overrides[key] = getattr(args, flag, None)
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = args.seeds
    if getattr(args, "quick", False):
        overrides["seeds"] = QUICK_SEEDS
    if getattr(args, "permutation", None) is not None:
        overrides["permutation"] = args.permutation
    if getattr(args, "subgroups", None) is not None:
        overrides["subgroups"] = args.subgroups
    cfg = merge(base, {k: v for k, v in overrides.items() if k != "cohort"})
    if "cohort" in overrides:
        d = cfg.to_dict()
        d["cohort"] = {**d["cohort"], **overrides["cohort"]}
        cfg = merge(None, d)
    return cfg


def _cohort_for(cfg: RunConfig) -> Cohort:
    src = cfg.cohort
    if src.kind == "synthetic":
        return generate_synthetic_cohort(src.seed, src.n, src.prevalence, GeneratorConfig(signal=src.signal))
    return apply_inclusion(load_cohort(src.path, src.format, src.labs_path))


def _embedder_for(cfg: RunConfig) -> Embedder:
    cache = EmbeddingCache(cfg.cache_dir) if cfg.cache_dir else None
    return Embedder(cfg.backend, cache)


def _spec_for(cfg: RunConfig) -> ExperimentSpec:
    return ExperimentSpec(
        name=cfg.strategy,
        strategy=cfg.strategy,
        pooling=cfg.pooling,
        pca_components=cfg.pca_components,
        params=cfg.params,
        seeds=cfg.seeds,
        k=cfg.k,
        early_stopping=cfg.early_stopping,
    )


def _counts(cohort: Cohort) -> str:
    pos = sum(cohort.labels)
    return f"{len(cohort)} subjects ({pos} PTE, {len(cohort) - pos} non-PTE)"


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    base = load_config(args.config).cohort if args.config else None
    src = base or RunConfig().cohort
    seed = src.seed if args.seed is None else args.seed
    n = src.n if args.n is None else args.n
    prevalence = src.prevalence if args.prevalence is None else args.prevalence
    signal = src.signal if args.signal is None else args.signal
    cohort = generate_synthetic_cohort(seed, n, prevalence, GeneratorConfig(signal=signal))
    write_cohort(cohort, args.out, args.format)
    _say(f"wrote {_counts(cohort)} to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    raw = load_cohort(args.input, args.format, args.labs)
    cohort = apply_inclusion(raw)
    write_cohort(cohort, args.out, args.out_format)
    _say(f"ingested {len(raw)} records; kept {_counts(cohort)}; excluded {len(raw) - len(cohort)}")
    return EXIT_OK


def cmd_serialize(args) -> int:
    cohort = apply_inclusion(load_cohort(args.cohort, args.format))
    records = paragraph_records(cohort.subjects)
    atomic_write_text(args.out, dump_paragraphs(records))
    _say(f"wrote {len(records)} paragraphs for {len(cohort)} subjects to {args.out}")
    return EXIT_OK


def _atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_embed(args) -> int:
    cfg = _resolve_config(args)
    if args.backend_id or args.dim or args.endpoint:
        d = cfg.backend.to_dict()
        if args.endpoint:
            d.update(kind="remote", endpoint=args.endpoint)
        if args.backend_id:
            d["backend_id"] = args.backend_id
        if args.dim:
            d["dim"] = args.dim
        try:
            cfg = replace(cfg, backend=BackendDescriptor(**d))
        except ValueError as exc:
            raise ConfigError(f"backend: {exc}") from exc
    records = load_paragraphs(args.paragraphs)
    if not records:
        raise CohortError("no paragraphs to embed")
    embedder = _embedder_for(cfg)
    vectors = embedder.pooled_matrix([r["text"] for r in records], cfg.pooling)
    buf = io.BytesIO()
    np.savez(
        buf,
        subject_ids=np.array([r["subject_id"] for r in records]),
        aspects=np.array([r["aspect"] for r in records]),
        vectors=vectors,
        backend=np.array(json.dumps(cfg.backend.to_dict(), sort_keys=True)),
        pooling=np.array(cfg.pooling),
    )
    _atomic_write_bytes(args.out, buf.getvalue())
    cache = embedder.cache
    if cache is not None:
        total = cache.hits + cache.misses
        rate = 100.0 * cache.hits / total if total else 100.0
        _say(f"cache: {cache.hits} hits, {cache.misses} misses ({rate:.1f}% hits)")
    _say(f"wrote {len(records)} pooled vectors (dim {cfg.backend.dim}, {cfg.pooling}) to {args.out}")
    return EXIT_OK


def _print_summary(experiments):
    for exp in experiments:
        a = exp["aggregate"]
        _say(
            f"{exp['name']:<32} AUROC {a['auroc']['mean']:.3f} ± {a['auroc']['std']:.3f}  "
            f"AUPRC {a['auprc']['mean']:.3f} ± {a['auprc']['std']:.3f}"
        )


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    cohort = _cohort_for(cfg)
    prep = PreparedCohort.from_cohort(cohort, _embedder_for(cfg))
    spec = _spec_for(cfg)
    main_result = run_spec(prep, spec, cfg.jobs)
    results = [main_result]
    if cfg.permutation:
        results.append(permutation_baseline(prep, spec, cfg.jobs))
    experiments = [r.report() for r in results]
    extras = {"subgroups": subgroup_eval(main_result)} if cfg.subgroups else None
    report = build_report(cfg.fingerprint(), cfg.to_dict_for_report(), experiments, extras)
    paths = write_report_files(cfg.output_dir, "report", report)
    _print_summary(experiments)
    _say("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    cohort = _cohort_for(cfg)
    prep = PreparedCohort.from_cohort(cohort, _embedder_for(cfg))
    spec = _spec_for(cfg)
    results = list(ablation_suite(prep, spec, cfg.jobs).values())
    for aspect in ASPECTS:
        results.append(single_aspect_experiment(prep, aspect, spec, jobs=cfg.jobs))
    results.append(imaging_notes_analysis(prep, spec, cfg.jobs)["available"])
    experiments = [r.report() for r in results]
    report = build_report(cfg.fingerprint(), cfg.to_dict_for_report(), experiments)
    paths = write_report_files(cfg.output_dir, "ablation", report)
    _print_summary(experiments)
    _say("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_report(args) -> int:
    experiments = []
    for path in args.inputs:
        experiments.extend(load_report(path)["experiments"])
    text = summary_csv(experiments)
    if args.out:
        atomic_write_text(args.out, text)
        _say(f"wrote summary of {len(experiments)} configurations to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_run_options(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--cohort", help="cohort file (overrides the config's cohort source)")
    p.add_argument("--cohort-format", default="csv", choices=("csv", "jsonl"))
    p.add_argument("--strategy", choices=("tabular_only", "embeddings_only", "naive_fusion", "modality_aware"))
    p.add_argument("--pooling", choices=("mean", "cls", "max"))
    p.add_argument("--k", type=int, help="number of folds")
    p.add_argument("--seeds", type=int, help="number of repeated seeds (0..N-1)")
    p.add_argument("--quick", action="store_true", help=f"quick profile: {QUICK_SEEDS} seeds")
    p.add_argument("--early-stopping", choices=("inner_split", "validation_fold"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--cache-dir", help="embedding cache directory")
    p.add_argument("--jobs", type=int, help="parallel (seed, fold) workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pterisk", description="PTE risk modeling pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cohort")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--prevalence", type=float)
    p.add_argument("--signal", choices=("clinical", "text_only"))
    p.add_argument("--format", default="csv", choices=("csv", "jsonl"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="load, validate and filter a cohort file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "jsonl"))
    p.add_argument("--labs", help="long-format lab measurements CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", default="csv", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serialize", help="write per-aspect paragraphs as JSONL")
    p.add_argument("--cohort", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "jsonl"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("embed", help="embed paragraphs and write pooled vectors (.npz)")
    p.add_argument("--config")
    p.add_argument("--paragraphs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pooling", choices=("mean", "cls", "max"))
    p.add_argument("--cache-dir")
    p.add_argument("--backend-id")
    p.add_argument("--dim", type=int)
    p.add_argument("--endpoint", help="remote embedding service URL")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("evaluate", help="cross-validated experiment plus permutation baseline")
    _add_run_options(p)
    p.add_argument("--permutation", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--subgroups", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="pooling, paragraph-layout and single-aspect ablations")
    _add_run_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="merge report documents into one summary table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (CohortError, ExperimentError, MetricError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
