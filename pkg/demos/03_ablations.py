"""Paragraph layout, pooling and single-aspect ablations.

Every variant reuses the same fold plan per seed, so differences are paired.

    python demos/03_ablations.py --seeds 3
"""

import argparse

from pterisk.embedder import BackendDescriptor, Embedder
from pterisk.evaluation import (
    ExperimentSpec,
    PreparedCohort,
    ablation_suite,
    imaging_notes_analysis,
    single_aspect_experiment,
)
from pterisk.serializer import ASPECTS
from pterisk.synthetic import generate_synthetic_cohort


def fmt(result, metric):
    a = result.aggregate()[metric]
    return f"{a['mean']:.3f} ± {a['std']:.3f}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    prep = PreparedCohort.from_cohort(generate_synthetic_cohort(7), Embedder(BackendDescriptor("hash-128", 128)))
    spec = ExperimentSpec(seeds=tuple(range(args.seeds)))

    print("embeddings only: layout and pooling")
    for name, result in ablation_suite(prep, spec).items():
        print(f"  {name:<20} AUROC {fmt(result, 'auroc')}  AUPRC {fmt(result, 'auprc')}")
    # the hash backend's [CLS] row is the same for every text, so CLS pooling carries no signal

    print("\none aspect at a time")
    for aspect in ASPECTS:
        r = single_aspect_experiment(prep, aspect, spec)
        print(f"  {aspect.value:<22} AUROC {fmt(r, 'auroc')}")

    img = imaging_notes_analysis(prep, spec)
    n_avail = img["available"].meta["n_subjects"]
    print("\nimaging notes")
    print(f"  {f'full cohort (n={len(prep)})':<24} AUROC {fmt(img['full'], 'auroc')}")
    print(f"  {f'with a report (n={n_avail})':<24} AUROC {fmt(img['available'], 'auroc')}")


if __name__ == "__main__":
    main()
