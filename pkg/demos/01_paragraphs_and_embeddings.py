"""Walk one synthetic subject through serialization, embedding and feature assembly.

    python demos/01_paragraphs_and_embeddings.py
"""

import numpy as np

from pterisk.embedder import BackendDescriptor, Embedder, tokenize
from pterisk.features import encode_tabular, fusion_layout
from pterisk.serializer import concatenate_paragraphs, serialize_all
from pterisk.synthetic import generate_synthetic_cohort


def main():
    cohort = generate_synthetic_cohort(7)
    pos = sum(cohort.labels)
    print(f"synthetic cohort: {len(cohort)} subjects, {pos} PTE / {len(cohort) - pos} non-PTE\n")

    subject = next(s for s in cohort.subjects if s.label and s.imaging.available)
    print(f"subject {subject.subject_id} (PTE={subject.label})")
    paragraphs = serialize_all(subject)
    for p in paragraphs:
        print(f"  [{p.aspect}] {p.text}")

    combined = concatenate_paragraphs(paragraphs)
    print(f"\nconcatenated variant: {len(combined.text)} characters under '{combined.context_tag}'")

    # the hash backend is offline and deterministic; a remote service plugs in via BackendDescriptor
    embedder = Embedder(BackendDescriptor("hash-128", 128))
    course = paragraphs[1].text
    print(f"\nhospital-course tokens: {tokenize(course)[:12]} ...")
    for pooling in ("mean", "max", "cls"):
        v = embedder.pooled_matrix([course], pooling)[0]
        print(f"  {pooling:>4} pooling: dim {v.size}, first values {[round(float(x), 3) for x in v[:4]]}")

    print("\ntabular blocks:")
    for block in encode_tabular(subject):
        missing = int(np.isnan(block.values).sum())
        print(f"  {block.aspect.value:<22} {len(block.values):>2} columns, {missing} missing")

    tab, emb = fusion_layout("modality_aware")
    print("\nmodality-aware layout")
    print("  tabular :", [a.value for a in tab])
    print("  embedded:", [a.value for a in emb])


if __name__ == "__main__":
    main()
