"""Tabular encodings, per-aspect PCA and feature fusion.

Missing values are ``np.nan`` throughout; the tree learner routes them with
learned default directions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .cohort import CT_FINDINGS, HISTORY_FLAGS, LAB_ANALYTES, Subject, TriState
from .serializer import ASPECTS, AspectId

MISSING = np.nan
SUMMARY_STATS = ("first", "last", "min", "max", "mean", "std")
DEFAULT_COMPONENTS = 16

SEX_VOCAB = ("female", "male")
RACE_VOCAB = (
    "white",
    "black",
    "asian",
    "american indian or alaska native",
    "native hawaiian or pacific islander",
)
SURGERY_VOCAB = (
    "craniotomy",
    "decompressive craniectomy",
    "burr hole evacuation",
    "external ventricular drain",
    "elevation of depressed skull fracture",
)

FUSION_STRATEGIES = ("tabular_only", "embeddings_only", "naive_fusion", "modality_aware")
MODALITY_AWARE_TABULAR = (AspectId.GCS, AspectId.CT_FINDINGS, AspectId.LABS)
MODALITY_AWARE_EMBEDDED = (AspectId.HOSPITAL_COURSE, AspectId.IMAGING_NOTES, AspectId.HISTORY_DEMOGRAPHICS)

_TRISTATE_CODE = {
    TriState.PRESENT: 1.0,
    TriState.ABSENT: 0.0,
    TriState.INDETERMINATE: MISSING,
    TriState.NOT_REPORTED: MISSING,
}


@dataclass(frozen=True, eq=False)
class FeatureBlock:
    aspect: object
    kind: str
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("feature names and values differ in length")
        if self.kind == "embedding" and np.isnan(self.values).any():
            raise ValueError("embedding blocks cannot hold missing markers")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    names: tuple
    values: np.ndarray


def _num(v):
    return MISSING if v is None else float(v)


def _flag(v):
    return MISSING if v is None else float(bool(v))


def _one_hot(prefix, value, vocab, applicable=True):
    names = [f"{prefix}={v}" for v in vocab] + [f"{prefix}=other"]
    if not applicable:
        return names, [0.0] * len(names)
    if value is None:
        return names, [MISSING] * len(names)
    key = " ".join(str(value).lower().split())
    hot = [1.0 if key == v else 0.0 for v in vocab]
    hot.append(0.0 if any(hot) else 1.0)
    return names, hot


def _tabular_gcs(s: Subject):
    names, vals = [], []
    for part in ("total", "eye", "verbal", "motor"):
        for end in ("worst", "best"):
            names.append(f"gcs.{part}_{end}")
            vals.append(_num(getattr(s.gcs, f"{part}_{end}")))
    return names, vals


def _tabular_course(s: Subject):
    c = s.course
    names = [
        "course.icu_admitted",
        "course.icu_days",
        "course.surgery_performed",
        "course.hours_to_surgery",
        "course.acute_seizure_7d",
    ]
    vals = [_flag(c.icu_admitted), _num(c.icu_days), _flag(c.surgery_performed), _num(c.hours_to_surgery), _flag(c.acute_seizure_7d)]
    n2, v2 = _one_hot("course.surgery_type", c.surgery_type, SURGERY_VOCAB, applicable=c.surgery_performed)
    return names + n2, vals + v2


def _tabular_ct(s: Subject):
    names = [f"ct.{f}" for f in CT_FINDINGS] + ["ct.marshall_score"]
    vals = [_TRISTATE_CODE[getattr(s.ct, f)] for f in CT_FINDINGS] + [_num(s.ct.marshall_score)]
    return names, vals


def _tabular_imaging(s: Subject):
    img = s.imaging
    return (
        ["imaging.ct_report_available", "imaging.mri_report_available"],
        [float(bool(img.ct_report and img.ct_report.strip())), float(bool(img.mri_report and img.mri_report.strip()))],
    )


def _tabular_labs(s: Subject):
    names, vals = [], []
    for analyte in LAB_ANALYTES:
        summary = getattr(s.labs, analyte)
        for stat in SUMMARY_STATS:
            names.append(f"labs.{analyte}.{stat}")
            vals.append(MISSING if summary is None else float(getattr(summary, stat)))
    return names, vals


def _tabular_history(s: Subject):
    h = s.history
    names, vals = ["history.age_years"], [float(h.age_years)]
    for prefix, value, vocab in (("history.sex", h.sex, SEX_VOCAB), ("history.race", h.race, RACE_VOCAB)):
        n2, v2 = _one_hot(prefix, value, vocab)
        names += n2
        vals += v2
    for flag in HISTORY_FLAGS:
        names.append(f"history.{flag}")
        vals.append(_flag(getattr(h, flag)))
    return names, vals


_TABULAR = {
    AspectId.GCS: _tabular_gcs,
    AspectId.HOSPITAL_COURSE: _tabular_course,
    AspectId.CT_FINDINGS: _tabular_ct,
    AspectId.IMAGING_NOTES: _tabular_imaging,
    AspectId.LABS: _tabular_labs,
    AspectId.HISTORY_DEMOGRAPHICS: _tabular_history,
}


def encode_tabular(subject: Subject) -> list:
    """One tabular FeatureBlock per aspect, in fixed aspect order."""
    blocks = []
    for aspect in ASPECTS:
        names, vals = _TABULAR[aspect](subject)
        blocks.append(FeatureBlock(aspect, "tabular", tuple(names), np.array(vals, dtype=np.float64)))
    return blocks


def tabular_matrix(subjects: Sequence[Subject], aspects=ASPECTS):
    """Stack tabular blocks of ``aspects`` for many subjects: ``(names, X)``."""
    aspects = [AspectId(a) for a in aspects]
    rows, names = [], None
    for s in subjects:
        blocks = {b.aspect: b for b in encode_tabular(s)}
        chosen = [blocks[a] for a in aspects]
        if names is None:
            names = tuple(n for b in chosen for n in b.names)
        rows.append(np.concatenate([b.values for b in chosen]) if chosen else np.zeros(0))
    if names is None:
        names = tuple(n for a in aspects for n in _TABULAR[a](Subject("_"))[0])
    X = np.vstack(rows) if rows else np.zeros((0, len(names)))
    return names, X.reshape(len(rows), len(names))


@dataclass(frozen=True, eq=False)
class PcaModel:
    aspect: object
    mean: np.ndarray
    components: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def identical_to(self, other: "PcaModel") -> bool:
        return (
            self.aspect == other.aspect
            and self.mean.tobytes() == other.mean.tobytes()
            and self.components.shape == other.components.shape
            and self.components.tobytes() == other.components.tobytes()
        )


def fit_pca(train_vectors, k: int = DEFAULT_COMPONENTS, aspect=None) -> PcaModel:
    """Principal directions of the centred training matrix via SVD.

    Keeps ``min(k, d, n - 1, rank)`` components ordered by singular value.
    Each component is flipped so that its largest-magnitude coordinate is
    positive.
    """
    X = np.asarray(train_vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("train_vectors must be a 2-D array")
    n, d = X.shape
    if n < 2:
        raise ValueError("insufficient training data")
    if d < 1:
        raise ValueError("train_vectors needs at least one column")
    if not np.all(np.isfinite(X)):
        raise ValueError("train_vectors must be finite")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(n, d) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    keep = min(int(k), d, n - 1, rank)
    comps = vt[:keep].copy()
    for row in comps:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    mean.setflags(write=False)
    comps.setflags(write=False)
    return PcaModel(aspect=aspect, mean=mean, components=comps)


def _project(centered: np.ndarray, components: np.ndarray) -> np.ndarray:
    # elementwise product + reduction keeps each row's result independent of batch size
    return np.sum(centered[:, None, :] * components[None, :, :], axis=2)


def transform_pca(model: PcaModel, vectors) -> np.ndarray:
    """Project one vector (``(d,)``) or a batch (``(n, d)``) onto the components."""
    V = np.asarray(vectors, dtype=np.float64)
    single = V.ndim == 1
    V2 = V.reshape(1, -1) if single else V
    if V2.shape[1] != model.mean.shape[0]:
        raise ValueError(f"vector length {V2.shape[1]} != model dimension {model.mean.shape[0]}")
    if not np.all(np.isfinite(V2)):
        raise ValueError("vectors must be finite")
    out = _project(V2 - model.mean, model.components)
    return out[0] if single else out


def fusion_layout(strategy: str, aspects: Optional[Sequence] = None):
    """``(tabular aspects, embedded blocks)`` for a fusion strategy.

    ``aspects`` restricts both lists (single-aspect experiments). The
    concatenated-paragraph block is named ``"combined"``.
    """
    if strategy == "tabular_only":
        tab, emb = ASPECTS, ()
    elif strategy == "embeddings_only":
        tab, emb = (), ASPECTS
    elif strategy == "naive_fusion":
        tab, emb = ASPECTS, ASPECTS
    elif strategy == "modality_aware":
        tab, emb = MODALITY_AWARE_TABULAR, MODALITY_AWARE_EMBEDDED
    else:
        raise ValueError(f"unknown fusion strategy {strategy!r}")
    if aspects is not None:
        wanted = {AspectId(a) for a in aspects}
        tab = tuple(a for a in tab if a in wanted)
        emb = tuple(a for a in emb if a in wanted)
    return tuple(tab), tuple(emb)


def _block_key(aspect):
    return aspect.value if isinstance(aspect, AspectId) else str(aspect)


def embedding_names(block, k: int) -> tuple:
    return tuple(f"emb.{_block_key(block)}.pc{j}" for j in range(k))


def assemble_features(
    subject: Subject,
    strategy: str,
    embeddings: Mapping,
    pca: Mapping,
    aspects: Optional[Sequence] = None,
    embedded_blocks: Optional[Sequence] = None,
) -> FeatureVector:
    """Fuse tabular blocks and PCA-reduced embeddings for one subject.

    ``embeddings`` maps aspect (or block name) to a pooled vector or
    :class:`~pterisk.embedder.PooledEmbedding`; ``pca`` maps the same keys to
    fold-local :class:`PcaModel` objects. ``embedded_blocks`` overrides the
    embedded part of the layout (used for the concatenated-paragraph variant).
    """
    tab, emb = fusion_layout(strategy, aspects)
    if embedded_blocks is not None:
        emb = tuple(embedded_blocks)
    names, parts = [], []
    tab_blocks = {b.aspect: b for b in encode_tabular(subject)}
    for a in tab:
        names.extend(tab_blocks[a].names)
        parts.append(tab_blocks[a].values)
    for block in emb:
        model = pca.get(block) if block in pca else pca.get(_block_key(block))
        if model is None:
            raise KeyError(f"pca not fitted for {_block_key(block)}")
        vec = embeddings[block] if block in embeddings else embeddings[_block_key(block)]
        vec = getattr(vec, "vector", vec)
        names.extend(embedding_names(block, model.k))
        parts.append(transform_pca(model, vec))
    values = np.concatenate(parts) if parts else np.zeros(0)
    return FeatureVector(names=tuple(names), values=values)


def build_feature_matrix(
    tabular: Mapping,
    embeddings: Mapping,
    pca: Mapping,
    tab_aspects: Sequence,
    emb_blocks: Sequence,
):
    """Batch counterpart of :func:`assemble_features`.

    ``tabular`` maps aspect to ``(names, X)``; ``embeddings`` maps block to an
    ``(n, dim)`` array. Row ``i`` equals ``assemble_features`` for subject ``i``.
    """
    names, parts = [], []
    n = None
    for a in tab_aspects:
        bn, X = tabular[a]
        names.extend(bn)
        parts.append(X)
        n = X.shape[0]
    for block in emb_blocks:
        model = pca.get(block)
        if model is None:
            raise KeyError(f"pca not fitted for {_block_key(block)}")
        E = embeddings[block]
        names.extend(embedding_names(block, model.k))
        parts.append(transform_pca(model, E))
        n = E.shape[0]
    if not parts:
        raise ValueError("feature layout is empty")
    return tuple(names), np.hstack(parts).reshape(n, len(names))


def feature_matrix_csv(subject_ids: Sequence[str], names: Sequence[str], X: np.ndarray) -> str:
    """Delimited export: header of feature names, one row per subject, blank = missing."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subject_id", *names])
    for sid, row in zip(subject_ids, X):
        writer.writerow([sid, *("" if np.isnan(v) else repr(float(v)) for v in row)])
    return buf.getvalue()
