"""Out-of-distribution scores and threshold metrics.

Scores follow the convention "higher means in-distribution". The energy
score -T log sum exp(logit / T) is lower for in-distribution data, so
``detection_score`` negates it before it reaches ``metric_suite``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..mlr import softmax
from ..net import TrainState, logits_of

SCORE_KINDS = ("softmax", "energy")


def ood_score(logits, kind: str, T: float = 1.0) -> np.ndarray:
    """Max softmax probability, or the energy -T * logsumexp(logits / T)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if kind == "softmax":
        return softmax(z).max(axis=-1)
    if kind == "energy":
        if not T > 0:
            raise ValueError("temperature must be positive")
        s = z / T
        m = s.max(axis=-1, keepdims=True)
        return -T * (m[:, 0] + np.log(np.sum(np.exp(s - m), axis=-1)))
    raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


def detection_score(logits, kind: str, T: float = 1.0) -> np.ndarray:
    s = ood_score(logits, kind, T)
    return -s if kind == "energy" else s


def state_scores(state: TrainState, X, kind: str, T: float = 1.0) -> np.ndarray:
    return detection_score(logits_of(state, X), kind, T)


class OodMetrics(NamedTuple):
    fpr95: float
    auroc: float
    aupr: float


def _curve(in_scores, out_scores):
    """Cumulative (TP, FP) counts at each distinct threshold, highest first."""
    s = np.concatenate([in_scores, out_scores])
    pos = np.concatenate([np.ones(len(in_scores)), np.zeros(len(out_scores))])
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(1.0 - pos)[last]
    return tp, fp


def metric_suite(in_scores, out_scores) -> OodMetrics:
    """FPR at 95% TPR, area under ROC (trapezoid), and average precision.

    In-distribution is the positive class; a sample is predicted positive when
    its score is >= the threshold, and equal scores form a single threshold.
    """
    in_scores = np.asarray(in_scores, dtype=np.float64).ravel()
    out_scores = np.asarray(out_scores, dtype=np.float64).ravel()
    if in_scores.size == 0 or out_scores.size == 0:
        raise ValueError("both score sets must be non-empty")
    tp, fp = _curve(in_scores, out_scores)
    tpr = tp / in_scores.size
    fpr = fp / out_scores.size

    fpr95 = float(np.min(fpr[tpr >= 0.95]))

    x = np.r_[0.0, fpr]
    yv = np.r_[0.0, tpr]
    auroc = float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2.0))

    precision = tp / (tp + fp)
    recall_steps = np.diff(np.r_[0.0, tpr])
    aupr = float(np.sum(recall_steps * precision))
    return OodMetrics(fpr95, auroc, aupr)
