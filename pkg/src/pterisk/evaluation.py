"""Repeated stratified cross-validation and the experiment variants built on it."""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .cohort import Cohort, Subject
from .embedder import Embedder
from .features import DEFAULT_COMPONENTS, build_feature_matrix, fit_pca, fusion_layout, tabular_matrix
from .gbdt import BoostedModel, TrainParams, predict_proba, train, train_rounds
from .metrics import METRIC_NAMES, MetricError, MetricSet, auroc, compute_metrics
from .serializer import ASPECTS, AspectId, concatenate_paragraphs, serialize_all

COMBINED = "combined"
EARLY_STOPPING_MODES = ("inner_split", "validation_fold")

CAVEATS = {
    "inner_split": (
        "early stopping uses a stratified split of each training partition; the model is then "
        "refit on the whole training partition for the selected number of rounds"
    ),
    "validation_fold": (
        "the held-out fold doubles as the early-stopping set, so reported metrics are mildly optimistic"
    ),
}


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignments: Mapping[str, int]

    def folds_for(self, subject_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.assignments[s] for s in subject_ids], dtype=np.intp)


def stratified_kfold(labels, k: int = 5, seed: int = 0, subject_ids: Optional[Sequence[str]] = None) -> FoldPlan:
    """Shuffle each class with a seeded generator, then deal round-robin into ``k`` folds.

    Positives are dealt first; the negatives continue the rotation where the
    positives stopped, which keeps fold sizes within one of each other.
    """
    y = np.asarray(labels).astype(int)
    if subject_ids is None:
        subject_ids = [str(i) for i in range(y.size)]
    if len(subject_ids) != y.size:
        raise ValueError("labels and subject ids differ in length")
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    assignments = {}
    offset = 0
    for cls in (1, 0):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            raise ValueError(f"class {cls} has {members.size} subjects, fewer than k={k}")
        members = members[rng.permutation(members.size)]
        for j, i in enumerate(members):
            assignments[subject_ids[i]] = (offset + j) % k
        offset = (offset + members.size) % k
    return FoldPlan(k=k, seed=seed, assignments=assignments)


def _inner_split(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Boolean mask of an early-stopping subset holding ``fraction`` of each class."""
    mask = np.zeros(labels.size, dtype=bool)
    for cls in (1, 0):
        members = np.flatnonzero(labels == cls)
        take = min(members.size - 1, max(1, int(round(fraction * members.size))))
        mask[members[rng.permutation(members.size)[:take]]] = True
    return mask


# ---------------------------------------------------------------------------
# prepared inputs


class PreparedCohort:
    """Cohort with tabular blocks and paragraph texts computed once.

    Pooled embeddings are computed lazily per ``(block, pooling)`` and cached,
    so all folds and seeds share them. Embedding is a fixed, per-text map, so
    sharing it across partitions leaks nothing.
    """

    def __init__(self, subjects, labels, tabular, texts, embedder: Optional[Embedder], embeddings=None):
        self.subjects = tuple(subjects)
        self.subject_ids = [s.subject_id for s in self.subjects]
        self.labels = np.asarray(labels, dtype=int)
        self.tabular = tabular
        self.texts = texts
        self.embedder = embedder
        self._emb = dict(embeddings or {})

    @classmethod
    def from_cohort(cls, cohort: Cohort, embedder: Optional[Embedder]) -> "PreparedCohort":
        cohort.require_trainable()
        subjects = cohort.subjects
        tabular = {a: tabular_matrix(subjects, [a]) for a in ASPECTS}
        texts = {a: [] for a in ASPECTS}
        texts[COMBINED] = []
        for s in subjects:
            paragraphs = serialize_all(s)
            for p in paragraphs:
                texts[AspectId(p.aspect)].append(p.text)
            texts[COMBINED].append(concatenate_paragraphs(paragraphs).text)
        return cls(subjects, cohort.labels, tabular, texts, embedder)

    def __len__(self):
        return len(self.subjects)

    def embeddings(self, block, pooling: str) -> np.ndarray:
        key = (block, pooling)
        if key not in self._emb:
            if self.embedder is None:
                raise ExperimentError("no embedding backend configured")
            self._emb[key] = self.embedder.pooled_matrix(self.texts[block], pooling).astype(np.float64)
        return self._emb[key]

    def with_embeddings(self, block, pooling: str, matrix) -> "PreparedCohort":
        """Copy with one pooled-embedding matrix replaced (used to probe leakage)."""
        emb = dict(self._emb)
        emb[(block, pooling)] = np.asarray(matrix, dtype=np.float64)
        return PreparedCohort(self.subjects, self.labels, self.tabular, self.texts, self.embedder, emb)

    def with_labels(self, labels) -> "PreparedCohort":
        return PreparedCohort(self.subjects, labels, self.tabular, self.texts, self.embedder, self._emb)

    def take(self, idx) -> "PreparedCohort":
        idx = np.asarray(idx, dtype=np.intp)
        tabular = {a: (names, X[idx]) for a, (names, X) in self.tabular.items()}
        texts = {b: [t[i] for i in idx] for b, t in self.texts.items()}
        emb = {key: E[idx] for key, E in self._emb.items()}
        return PreparedCohort([self.subjects[i] for i in idx], self.labels[idx], tabular, texts, self.embedder, emb)

    def subset(self, predicate: Callable[[Subject], bool]) -> "PreparedCohort":
        return self.take([i for i, s in enumerate(self.subjects) if predicate(s)])


# ---------------------------------------------------------------------------
# experiment configuration and results


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "modality_aware"
    strategy: str = "modality_aware"
    pooling: str = "mean"
    aspects: Optional[tuple] = None
    concatenated: bool = False
    pca_components: int = DEFAULT_COMPONENTS
    params: TrainParams = field(default_factory=TrainParams)
    seeds: tuple = tuple(range(30))
    k: int = 5
    permute: bool = False
    early_stopping: str = "inner_split"
    inner_fraction: float = 0.2
    subset: Optional[str] = None

    def __post_init__(self):
        fusion_layout(self.strategy, self.aspects)
        if self.early_stopping not in EARLY_STOPPING_MODES:
            raise ValueError(f"unknown early-stopping mode {self.early_stopping!r}")
        if not (0.0 < self.inner_fraction < 1.0):
            raise ValueError("inner_fraction must lie in (0, 1)")
        if self.subset not in (None, "imaging_available"):
            raise ValueError(f"unknown subset {self.subset!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.aspects is not None:
            object.__setattr__(self, "aspects", tuple(AspectId(a).value for a in self.aspects))

    def layout(self):
        tab, emb = fusion_layout(self.strategy, self.aspects)
        if self.concatenated:
            emb = (COMBINED,) if emb else ()
        return tab, emb

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspects"] = list(self.aspects) if self.aspects is not None else None
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class FoldOutcome:
    seed: int
    fold: int
    metrics: MetricSet
    test_idx: np.ndarray
    scores: np.ndarray
    pca: dict
    model: BoostedModel
    selected_rounds: int

    def record(self, labels) -> dict:
        y = labels[self.test_idx]
        return {
            "seed": self.seed,
            "fold": self.fold,
            "n_test": int(y.size),
            "n_test_pos": int(y.sum()),
            "rounds": int(self.selected_rounds),
            **self.metrics.to_dict(),
        }


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    folds: list
    oof: dict
    labels: np.ndarray
    subjects: tuple
    meta: dict
    labels_by_seed: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        return aggregate_folds([f.record(self.labels) for f in self.folds])

    def report(self) -> dict:
        return {
            "name": self.spec.name,
            "config": self.spec.to_dict(),
            "meta": self.meta,
            "folds": [f.record(self.labels) for f in self.folds],
            "aggregate": self.aggregate(),
        }


def aggregate_folds(records: Sequence[dict]) -> dict:
    """Mean and population std of each metric over ``(seed, fold)`` records."""
    ordered = sorted(records, key=lambda r: (r["seed"], r["fold"]))
    out = {}
    for name in METRIC_NAMES:
        v = np.array([r[name] for r in ordered], dtype=np.float64)
        out[name] = {"mean": float(np.mean(v)), "std": float(np.std(v))}
    return out


# ---------------------------------------------------------------------------
# one (seed, fold) unit


def fit_fold(
    prep: PreparedCohort, spec: ExperimentSpec, plan_folds: np.ndarray, seed: int, fold: int, labels=None
) -> FoldOutcome:
    """Fit PCA and the booster on the training partition; score the held-out fold."""
    y = prep.labels if labels is None else np.asarray(labels, dtype=int)
    test_idx = np.flatnonzero(plan_folds == fold)
    train_idx = np.flatnonzero(plan_folds != fold)
    tab, emb = spec.layout()
    pca, embeddings = {}, {}
    for block in emb:
        E = prep.embeddings(block, spec.pooling)
        pca[block] = fit_pca(E[train_idx], spec.pca_components, aspect=block)
        embeddings[block] = E
    tabular = {a: prep.tabular[a] for a in tab}
    _, X = build_feature_matrix(tabular, embeddings, pca, tab, emb)
    Xtr, ytr = X[train_idx], y[train_idx]
    Xte, yte = X[test_idx], y[test_idx]
    try:
        if spec.early_stopping == "validation_fold":
            model = train(Xtr, ytr, Xte, yte, spec.params)
            rounds = model.best_round
        else:
            rng = np.random.default_rng((seed, fold))
            stop = _inner_split(ytr, spec.inner_fraction, rng)
            probe = train(Xtr[~stop], ytr[~stop], Xtr[stop], ytr[stop], spec.params)
            rounds = probe.best_round
            model = train_rounds(Xtr, ytr, rounds, spec.params)
        scores = predict_proba(model, Xte)
        metrics = compute_metrics(scores, yte)
    except (ValueError, MetricError) as exc:
        raise ExperimentError(f"{spec.name}: seed {seed}, fold {fold}: {exc}") from exc
    return FoldOutcome(seed, fold, metrics, test_idx, np.asarray(scores, dtype=np.float64), pca, model, rounds)


def permuted_labels(labels, seed: int) -> np.ndarray:
    """Labels shuffled by a generator derived from ``seed`` (independent of the fold-plan stream)."""
    y = np.asarray(labels, dtype=int)
    return y[np.random.default_rng((seed, 0x5EED)).permutation(y.size)]


def plan_units(prep: PreparedCohort, spec: ExperimentSpec):
    """``[(seed, labels, folds)]``: labels after optional permutation, fold index per subject."""
    units = []
    for seed in spec.seeds:
        y = permuted_labels(prep.labels, seed) if spec.permute else prep.labels
        plan = stratified_kfold(y, spec.k, seed, prep.subject_ids)
        units.append((seed, y, plan.folds_for(prep.subject_ids)))
    return units


_WORKER_STATE = {}


def _worker_init(prep, spec):
    _WORKER_STATE["prep"] = prep
    _WORKER_STATE["spec"] = spec


def _worker_run(args):
    folds, seed, fold, y = args
    return fit_fold(_WORKER_STATE["prep"], _WORKER_STATE["spec"], folds, seed, fold, y)


def run_spec(prep: PreparedCohort, spec: ExperimentSpec, jobs: int = 1, meta: Optional[dict] = None) -> ExperimentResult:
    """Run every ``(seed, fold)`` unit of ``spec`` and collect out-of-fold scores per seed."""
    if spec.subset == "imaging_available":
        prep = prep.subset(lambda s: s.imaging.available)
    tab, emb = spec.layout()
    for block in emb:
        prep.embeddings(block, spec.pooling)  # compute once before any fork
    units = plan_units(prep, spec)
    tasks = [(folds, seed, f, y) for seed, y, folds in units for f in range(spec.k)]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=jobs, initializer=_worker_init, initargs=(prep, spec)
        ) as pool:
            outcomes = list(pool.map(_worker_run, tasks))
    else:
        outcomes = [fit_fold(prep, spec, folds, seed, f, y) for folds, seed, f, y in tasks]
    outcomes.sort(key=lambda o: (o.seed, o.fold))
    oof = {}
    for o in outcomes:
        arr = oof.setdefault(o.seed, np.full(len(prep), np.nan))
        arr[o.test_idx] = o.scores
    labels_by_seed = {seed: y for seed, y, _ in units}
    info = {
        "n_subjects": len(prep),
        "n_positive": int(prep.labels.sum()),
        "tabular_aspects": [a.value for a in tab],
        "embedded_blocks": [b.value if isinstance(b, AspectId) else b for b in emb],
        "caveats": [CAVEATS[spec.early_stopping]],
    }
    if prep.embedder is not None and emb:
        info["backend"] = prep.embedder.descriptor.to_dict()
    info.update(meta or {})
    return ExperimentResult(spec, outcomes, oof, prep.labels, prep.subjects, info, labels_by_seed)


def run_experiment(
    cohort: Cohort,
    strategy: str,
    embedder: Optional[Embedder],
    pooling: str = "mean",
    params: TrainParams = TrainParams(),
    seeds: Sequence[int] = tuple(range(30)),
    k: int = 5,
    **kwargs,
) -> ExperimentResult:
    prep = PreparedCohort.from_cohort(cohort, embedder)
    spec = ExperimentSpec(name=strategy, strategy=strategy, pooling=pooling, params=params, seeds=tuple(seeds), k=k, **kwargs)
    return run_spec(prep, spec)


def permutation_baseline(prep: PreparedCohort, spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    return run_spec(prep, replace(spec, name=f"{spec.name}_permuted", permute=True), jobs)


def single_aspect_experiment(
    prep: PreparedCohort, aspect, spec: ExperimentSpec, available_only: bool = False, jobs: int = 1
) -> ExperimentResult:
    """Embeddings of one aspect as the only input."""
    a = AspectId(aspect)
    name = f"aspect_{a.value}" + ("_available" if available_only else "")
    s = replace(
        spec,
        name=name,
        strategy="embeddings_only",
        aspects=(a,),
        concatenated=False,
        subset="imaging_available" if available_only else None,
    )
    return run_spec(prep, s, jobs)


def imaging_notes_analysis(prep: PreparedCohort, spec: ExperimentSpec, jobs: int = 1) -> dict:
    """Imaging-notes embeddings on the full cohort and on subjects with a report."""
    return {
        "full": single_aspect_experiment(prep, AspectId.IMAGING_NOTES, spec, False, jobs),
        "available": single_aspect_experiment(prep, AspectId.IMAGING_NOTES, spec, True, jobs),
    }


def ablation_suite(prep: PreparedCohort, spec: ExperimentSpec, jobs: int = 1) -> dict:
    """Paragraph layout and pooling variants, all with the same fold plans per seed."""
    base = replace(spec, strategy="embeddings_only", aspects=None, concatenated=False, permute=False, subset=None)
    variants = {
        "per_aspect_mean": replace(base, name="per_aspect_mean", pooling="mean"),
        "concatenated_mean": replace(base, name="concatenated_mean", pooling="mean", concatenated=True),
        "per_aspect_cls": replace(base, name="per_aspect_cls", pooling="cls"),
        "per_aspect_max": replace(base, name="per_aspect_max", pooling="max"),
    }
    supported = prep.embedder.descriptor.pooling_strategies if prep.embedder is not None else ()
    return {name: run_spec(prep, v, jobs) for name, v in variants.items() if v.pooling in supported}


# ---------------------------------------------------------------------------
# subgroups


SUBGROUPS = (
    ("age<=65", lambda s: s.history.age_years <= 65),
    ("age>65", lambda s: s.history.age_years > 65),
    ("icu=yes", lambda s: s.course.icu_admitted),
    ("icu=no", lambda s: not s.course.icu_admitted),
    ("surgery=yes", lambda s: s.course.surgery_performed),
    ("surgery=no", lambda s: not s.course.surgery_performed),
    ("gcs_worst<9", lambda s: s.gcs.total_worst is not None and s.gcs.total_worst < 9),
    ("gcs_worst>=9", lambda s: s.gcs.total_worst is not None and s.gcs.total_worst >= 9),
    ("acute_seizure=yes", lambda s: s.course.acute_seizure_7d),
    ("acute_seizure=no", lambda s: not s.course.acute_seizure_7d),
)


def subgroup_eval(result: ExperimentResult, specs=SUBGROUPS) -> dict:
    """Per-subgroup AUROC from out-of-fold scores pooled within each seed.

    A subgroup whose members are all one class (for every seed) is reported
    as ``"undefined"``; seeds where it is single-class are skipped otherwise.
    """
    out = {}
    for name, pred in specs:
        mask = np.array([bool(pred(s)) for s in result.subjects], dtype=bool)
        values = []
        for seed in sorted(result.oof):
            y = result.labels_by_seed.get(seed, result.labels)[mask]
            try:
                values.append(auroc(result.oof[seed][mask], y))
            except MetricError:
                continue
        y0 = result.labels[mask]
        entry = {"n": int(mask.sum()), "n_pos": int(y0.sum())}
        if values:
            v = np.array(values)
            entry["auroc"] = {"mean": float(np.mean(v)), "std": float(np.std(v))}
        else:
            entry["auroc"] = "undefined"
        out[name] = entry
    return out


def fingerprint(obj) -> str:
    """sha256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(o):
    if isinstance(o, AspectId):
        return o.value
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
