"""Rank metrics for imbalanced binary outcomes.

Tied scores are always treated as one block: a cut point never separates two
subjects with the same score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

METRIC_NAMES = ("auroc", "auprc", "ppv_at_recall_30", "ppv_at_recall_50")


class MetricError(ValueError):
    pass


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos == 0 or neg == 0 or pos + neg != y.size:
        raise MetricError("undefined metric: both classes are required")
    return s, y, pos, neg


def _blocks(s, y):
    """Cumulative (tp, fp) at the end of each descending-score tie block."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(y_sorted)[ends]
    fp = (ends + 1) - tp
    return tp, fp


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with tied pairs counted as one half."""
    s, y, pos, neg = _prepare(scores, labels)
    tp, fp = _blocks(s, y)
    dtp = np.diff(np.r_[0, tp])
    dfp = np.diff(np.r_[0, fp])
    fp_before = np.r_[0, fp[:-1]]
    # positives in a block beat every negative in lower blocks, tie with their own
    concordant = np.sum(dtp * (neg - fp_before - dfp))
    ties = np.sum(dtp * dfp)
    return float((concordant + 0.5 * ties) / (pos * neg))


def auprc(scores, labels) -> float:
    """Average precision: sum over tie blocks of recall step times precision."""
    s, y, pos, _ = _prepare(scores, labels)
    tp, fp = _blocks(s, y)
    dtp = np.diff(np.r_[0, tp])
    precision = tp / (tp + fp)
    return float(np.sum(dtp * precision) / pos)


def ppv_at_recall(scores, labels, target: float) -> float:
    """Precision at the first descending cut whose recall reaches ``target``."""
    if not (0.0 < target <= 1.0):
        raise MetricError("target recall must lie in (0, 1]")
    s, y, pos, _ = _prepare(scores, labels)
    tp, fp = _blocks(s, y)
    recall = tp / pos
    hit = np.flatnonzero(recall >= target - 1e-12)
    j = int(hit[0])
    return float(tp[j] / (tp[j] + fp[j]))


@dataclass(frozen=True)
class MetricSet:
    auroc: float
    auprc: float
    ppv_at_recall_30: float
    ppv_at_recall_50: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(scores, labels) -> MetricSet:
    return MetricSet(
        auroc=auroc(scores, labels),
        auprc=auprc(scores, labels),
        ppv_at_recall_30=ppv_at_recall(scores, labels, 0.3),
        ppv_at_recall_50=ppv_at_recall(scores, labels, 0.5),
    )
