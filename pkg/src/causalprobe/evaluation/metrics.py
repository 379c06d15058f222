"""Ranking metrics over flattened edge scores.

Both metrics are computed from scratch so their tie conventions are explicit:
ROC AUC counts tied positive/negative pairs as one half, and AP ranks by
descending score with the original index as tiebreak.
"""

from __future__ import annotations

import numpy as np

from ..errors import UndefinedMetricError


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic P(score_pos > score_neg) with ties counted as 1/2."""
    s, y = _prepare(scores, labels)
    pos, neg = s[y], np.sort(s[~y])
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError(f"ROC AUC needs both classes (positives={pos.size}, negatives={neg.size})")
    below = np.searchsorted(neg, pos, side="left")
    tied = np.searchsorted(neg, pos, side="right") - below
    # Counts are integers or half-integers, so the sum is exact.
    u = below.sum() + 0.5 * tied.sum()
    return float(u / (pos.size * neg.size))


def average_precision(scores, labels) -> float:
    """Sum over ranks of (recall step) x precision, ranking by descending score, index tiebreak."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / n_pos)


def off_diagonal(matrix) -> np.ndarray:
    """Row-major off-diagonal entries of a square matrix."""
    m = np.asarray(matrix)
    return m[~np.eye(m.shape[-1], dtype=bool)]
