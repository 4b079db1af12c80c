import statistics
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pterisk.evaluation import (
    COMBINED,
    ExperimentError,
    ExperimentSpec,
    PreparedCohort,
    ablation_suite,
    aggregate_folds,
    fingerprint,
    fit_fold,
    imaging_notes_analysis,
    permutation_baseline,
    permuted_labels,
    plan_units,
    run_spec,
    stratified_kfold,
    subgroup_eval,
)
from pterisk.gbdt import TrainParams, models_identical
from pterisk.metrics import METRIC_NAMES, auroc
from pterisk.serializer import AspectId

FAST = TrainParams(max_rounds=60, early_stop_rounds=10)


def _spec(**kw):
    kw.setdefault("params", FAST)
    kw.setdefault("seeds", (0, 1))
    return ExperimentSpec(**kw)


def _counts(labels, plan):
    folds = plan.folds_for([str(i) for i in range(len(labels))])
    return [Counter(np.asarray(labels)[folds == f].tolist()) for f in range(plan.k)]


def test_fold_plan_for_reference_cohort_shape():
    labels = [1] * 58 + [0] * 198
    counts = _counts(labels, stratified_kfold(labels, 5, seed=11))
    assert sorted(c[1] for c in counts) == [11, 11, 12, 12, 12]
    assert sorted(c[0] for c in counts) == [39, 39, 40, 40, 40]
    assert sorted(c[0] + c[1] for c in counts) == [51, 51, 51, 51, 52]


def test_fold_plan_tiny_example():
    plan = stratified_kfold([1, 1, 0, 0], k=2, seed=0)
    folds = plan.folds_for(["0", "1", "2", "3"])
    assert sorted(folds[:2]) == [0, 1] and sorted(folds[2:]) == [0, 1]


def test_fold_plan_errors_and_determinism():
    with pytest.raises(ValueError, match="fewer than k"):
        stratified_kfold([1, 1, 0, 0, 0, 0], k=3)
    with pytest.raises(ValueError):
        stratified_kfold([1, 0], k=1)
    a = stratified_kfold([1, 0] * 20, 5, seed=4)
    assert a == stratified_kfold([1, 0] * 20, 5, seed=4)
    assert a != stratified_kfold([1, 0] * 20, 5, seed=5)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 8), st.integers(0, 40), st.integers(0, 40), st.integers(0, 10_000))
def test_fold_plan_is_stratified(k, extra_pos, extra_neg, seed):
    n_pos, n_neg = k + extra_pos, k + extra_neg
    labels = [1] * n_pos + [0] * n_neg
    plan = stratified_kfold(labels, k, seed)
    assert len(plan.assignments) == n_pos + n_neg
    counts = _counts(labels, plan)
    for cls, total in ((1, n_pos), (0, n_neg)):
        assert {c[cls] for c in counts} <= {total // k, -(-total // k)}
    sizes = [c[0] + c[1] for c in counts]
    assert max(sizes) - min(sizes) <= 1


def test_permuted_labels_keep_prevalence_and_use_own_stream():
    y = np.array([1] * 10 + [0] * 30)
    p = permuted_labels(y, 3)
    assert p.sum() == 10 and not np.array_equal(p, y)
    assert np.array_equal(p, permuted_labels(y, 3))
    assert not np.array_equal(p, permuted_labels(y, 4))


def test_aggregate_is_population_mean_and_std():
    records = [{"seed": s, "fold": f, **{m: 0.1 * s + 0.01 * f + i for i, m in enumerate(METRIC_NAMES)}} for s in (1, 0) for f in range(3)]
    agg = aggregate_folds(records)
    for i, m in enumerate(METRIC_NAMES):
        vals = [r[m] for r in records]
        assert agg[m]["mean"] == pytest.approx(statistics.fmean(vals), abs=1e-15)
        assert agg[m]["std"] == pytest.approx(statistics.pstdev(vals), abs=1e-15)


@pytest.fixture(scope="module")
def small_result(small_prep):
    return run_spec(small_prep, _spec())


def test_run_spec_covers_every_subject_once_per_seed(small_prep, small_result):
    assert [(f.seed, f.fold) for f in small_result.folds] == [(s, f) for s in (0, 1) for f in range(5)]
    for seed, scores in small_result.oof.items():
        assert not np.isnan(scores).any()
        idx = np.concatenate([f.test_idx for f in small_result.folds if f.seed == seed])
        assert sorted(idx.tolist()) == list(range(len(small_prep)))


def test_report_aggregate_recomputes_from_folds(small_result):
    rep = small_result.report()
    for m in METRIC_NAMES:
        vals = [r[m] for r in rep["folds"]]
        assert rep["aggregate"][m]["mean"] == pytest.approx(statistics.fmean(vals), abs=1e-12)
        assert rep["aggregate"][m]["std"] == pytest.approx(statistics.pstdev(vals), abs=1e-12)
    assert rep["meta"]["caveats"]


def test_whole_cohort_subgroup_equals_pooled_auroc(small_result):
    out = subgroup_eval(small_result, specs=(("all", lambda s: True),))
    expected = np.mean([auroc(small_result.oof[s], small_result.labels) for s in sorted(small_result.oof)])
    assert out["all"]["auroc"]["mean"] == pytest.approx(expected, abs=1e-12)
    assert out["all"]["n"] == len(small_result.labels)


def test_single_class_subgroup_is_undefined(small_result):
    negatives = {s.subject_id for s, y in zip(small_result.subjects, small_result.labels) if y == 0}
    out = subgroup_eval(small_result, specs=(("neg", lambda s: s.subject_id in negatives),))
    assert out["neg"]["auroc"] == "undefined"
    assert out["neg"]["n_pos"] == 0


def test_default_subgroups_reported(small_result):
    out = subgroup_eval(small_result)
    assert len(out) == 10
    assert out["age<=65"]["n"] + out["age>65"]["n"] == len(small_result.labels)


def test_held_out_embeddings_do_not_leak_into_fit(frozen_prep):
    spec = _spec(strategy="embeddings_only")
    seed, y, folds = plan_units(frozen_prep, spec)[0]
    test = folds == 2
    rng = np.random.default_rng(0)
    altered = frozen_prep
    for block in spec.layout()[1]:
        E = frozen_prep.embeddings(block, spec.pooling).copy()
        E[test] = rng.normal(scale=5.0, size=(int(test.sum()), E.shape[1]))
        altered = altered.with_embeddings(block, spec.pooling, E)
    a = fit_fold(frozen_prep, spec, folds, seed, 2, y)
    b = fit_fold(altered, spec, folds, seed, 2, y)
    assert all(a.pca[k].identical_to(b.pca[k]) for k in a.pca)
    assert models_identical(a.model, b.model)
    assert a.selected_rounds == b.selected_rounds > 0
    assert not np.array_equal(a.scores, b.scores)


def test_validation_fold_mode_is_available(small_prep):
    r = run_spec(small_prep, _spec(seeds=(0,), early_stopping="validation_fold"))
    assert "optimistic" in r.meta["caveats"][0]
    with pytest.raises(ValueError):
        _spec(early_stopping="test_fold")


def test_ablation_variants_share_fold_plans(small_prep):
    suite = ablation_suite(small_prep, _spec(seeds=(0,)))
    assert set(suite) == {"per_aspect_mean", "concatenated_mean", "per_aspect_cls", "per_aspect_max"}
    reference = [f.test_idx.tolist() for f in suite["per_aspect_mean"].folds]
    for r in suite.values():
        assert [f.test_idx.tolist() for f in r.folds] == reference
    assert suite["concatenated_mean"].meta["embedded_blocks"] == [COMBINED]
    mean = small_prep.embeddings(AspectId.LABS, "mean")
    assert not np.array_equal(mean, small_prep.embeddings(AspectId.LABS, "max"))


def test_permutation_and_imaging_variants(small_prep):
    perm = permutation_baseline(small_prep, _spec(seeds=(0,)))
    assert perm.spec.permute and perm.spec.name.endswith("_permuted")
    assert not np.array_equal(perm.labels_by_seed[0], small_prep.labels)
    img = imaging_notes_analysis(small_prep, _spec(seeds=(0,)))
    n_available = sum(s.imaging.available for s in small_prep.subjects)
    assert img["available"].meta["n_subjects"] == n_available < len(small_prep)
    assert img["full"].meta["embedded_blocks"] == ["imaging_notes"]


def test_parallel_run_matches_serial(small_prep):
    spec = _spec(seeds=(0,))
    a = run_spec(small_prep, spec).report()
    b = run_spec(small_prep, spec, jobs=2).report()
    assert fingerprint(a) == fingerprint(b)


def test_failure_names_seed_and_fold(small_prep):
    tiny = small_prep.take(list(range(12)))
    with pytest.raises((ExperimentError, ValueError)):
        run_spec(tiny, _spec(seeds=(0,)))


def test_missing_backend_is_reported(small_cohort):
    prep = PreparedCohort.from_cohort(small_cohort, None)
    with pytest.raises(ExperimentError, match="backend"):
        run_spec(prep, _spec(seeds=(0,)))
    run_spec(prep, _spec(seeds=(0,), strategy="tabular_only"))
