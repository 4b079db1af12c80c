"""Slow, obviously-correct reference implementations used as test oracles."""

from __future__ import annotations

import hashlib
import math
import struct
from fractions import Fraction


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for p in pos:
        for n in neg:
            if p > n:
                total += 1
            elif p == n:
                total += Fraction(1, 2)
    return total / (len(pos) * len(neg))


def _cuts(scores, labels):
    """(tp, fp) for every distinct threshold t, predicting positive when score >= t."""
    out = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        out.append((tp, fp))
    return out


def brute_auprc(scores, labels):
    P = sum(labels)
    total = Fraction(0)
    prev_tp = 0
    for tp, fp in _cuts(scores, labels):
        total += Fraction(tp - prev_tp, P) * Fraction(tp, tp + fp)
        prev_tp = tp
    return total


def brute_ppv_at_recall(scores, labels, target):
    P = sum(labels)
    for tp, fp in _cuts(scores, labels):
        if Fraction(tp, P) >= Fraction(target).limit_denominator(1000):
            return Fraction(tp, tp + fp)
    raise AssertionError("unreachable")


def hash_vector(token, dim, seed=0):
    """Pure-python token hash vector, float64 before the float32 cast."""
    words = []
    block = 0
    while len(words) < dim:
        prefix = f"{seed}:{block}:".encode()
        digest = hashlib.blake2b(prefix + token.encode("utf-8"), digest_size=32).digest()
        for j in range(8):
            words.append(struct.unpack_from("<I", digest, 4 * j)[0])
        block += 1
    return [w / 2**31 - 1 for w in words[:dim]]


def soft(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


def split_gain(GL, HL, GR, HR, alpha, lam):
    def score(G, H):
        return soft(G, alpha) ** 2 / (H + lam)

    return 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR))


def brute_best_split(x_cols, g, h, alpha, lam, min_hess=1e-6):
    """Enumerate every (feature, adjacent-value threshold, missing side).

    Returns ``(gain, feature, threshold, default_left)`` of the best split with
    ties resolved by lowest feature, lowest threshold, then missing-left.
    """
    best = None
    for f, col in enumerate(x_cols):
        present = sorted({v for v in col if not math.isnan(v)})
        gm = sum(gi for v, gi in zip(col, g) if math.isnan(v))
        hm = sum(hi for v, hi in zip(col, h) if math.isnan(v))
        for a, b in zip(present, present[1:]):
            thr = a + (b - a) / 2.0
            gl = sum(gi for v, gi in zip(col, g) if not math.isnan(v) and v < thr)
            hl = sum(hi for v, hi in zip(col, h) if not math.isnan(v) and v < thr)
            gr = sum(gi for v, gi in zip(col, g) if not math.isnan(v) and v >= thr)
            hr = sum(hi for v, hi in zip(col, h) if not math.isnan(v) and v >= thr)
            for left in (True, False):
                GL, HL = (gl + gm, hl + hm) if left else (gl, hl)
                GR, HR = (gr, hr) if left else (gr + gm, hr + hm)
                if HL < min_hess or HR < min_hess:
                    continue
                gain = split_gain(GL, HL, GR, HR, alpha, lam)
                if gain > 0 and (best is None or gain > best[0] + 1e-12):
                    best = (gain, f, thr, left)
    return best
