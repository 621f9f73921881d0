from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape or p.size < 1:
        raise MetricError(f"need equal non-empty lengths, got {p.shape} and {y.shape}")
    return float(np.count_nonzero(p == y)) / p.size


def auroc(scores, labels) -> float:
    """Mann-Whitney form: P(score_pos > score_neg) with ties counted as one half.

    Mid-ranks are half-integers, so the U statistic is exact and the result equals
    the pairwise count divided by P*N bit for bit.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    pos = y == 1
    P, N = int(pos.sum()), int((~pos).sum())
    if P == 0 or N == 0:
        raise MetricError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = float(ranks[pos].sum()) - P * (P + 1) / 2.0
    return u / (P * N)


def compute_metric(name: str, scores, labels) -> float:
    """``scores`` are positive-class margins; accuracy thresholds them at zero."""
    scores = np.asarray(scores, dtype=np.float64)
    if name == "accuracy":
        return accuracy((scores > 0).astype(np.int64), labels)
    if name == "auroc":
        return auroc(scores, labels)
    raise MetricError(f"unknown metric {name!r}")
