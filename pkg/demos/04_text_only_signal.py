"""A cohort whose outcome signal lives only in imaging-note wording.

Tabular features see shuffled structured fields; embeddings read the notes.

    python demos/04_text_only_signal.py --seeds 3
"""

import argparse

from pterisk.embedder import BackendDescriptor, Embedder
from pterisk.evaluation import ExperimentSpec, PreparedCohort, run_spec
from pterisk.synthetic import GeneratorConfig, generate_synthetic_cohort


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    cohort = generate_synthetic_cohort(11, config=GeneratorConfig(signal="text_only"))
    prep = PreparedCohort.from_cohort(cohort, Embedder(BackendDescriptor("hash-128", 128)))
    example = next(s for s in cohort.subjects if s.label)
    print(f"positive subject's note: {example.imaging.ct_report or example.imaging.mri_report}\n")

    for strategy in ("tabular_only", "embeddings_only"):
        r = run_spec(prep, ExperimentSpec(name=strategy, strategy=strategy, seeds=tuple(range(args.seeds))))
        a = r.aggregate()["auroc"]
        print(f"{strategy:<16} AUROC {a['mean']:.3f} ± {a['std']:.3f}")


if __name__ == "__main__":
    main()
