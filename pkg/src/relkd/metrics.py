"""Non-differentiable embedding-space diagnostics: positive/negative pair
similarity statistics, histograms, and the InfoNCE mutual-information bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import EmbeddingBatch


class MetricError(Exception):
    pass


@dataclass
class PairSimilarityStats:
    pos_mean: float
    neg_mean: float
    gap: float
    pos_values: np.ndarray
    neg_values: np.ndarray


@dataclass
class MiBound:
    n_negatives: int
    infonce_dir1: float
    infonce_dir2: float
    bound: float


def pair_similarity_stats(images: EmbeddingBatch, texts: EmbeddingBatch) -> PairSimilarityStats:
    """Diagonal cosines are positives, all off-diagonal cells are negatives."""
    a, b = images.array(), texts.array()
    if a.shape != b.shape:
        raise MetricError(f"pair_similarity_stats: shapes {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise MetricError("pair_similarity_stats: need B >= 2 for negatives")
    sim = a @ b.T
    pos = np.diagonal(sim).copy()
    neg = sim[~np.eye(n, dtype=bool)]
    pos_mean = float(pos.mean())
    neg_mean = float(neg.mean())
    return PairSimilarityStats(pos_mean, neg_mean, pos_mean - neg_mean, pos, neg)


def similarity_histogram(values, bins: int = 50, value_range=(-1.0, 1.0)) -> np.ndarray:
    """Equal-width counts over value_range; right-open bins except the last."""
    if bins < 1:
        raise MetricError(f"similarity_histogram: bins={bins} < 1")
    lo, hi = value_range
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        return np.zeros(bins, dtype=np.int64)
    if np.any(vals < lo - 1e-9) or np.any(vals > hi + 1e-9):
        raise MetricError("similarity_histogram: value outside range")
    vals = np.clip(vals, lo, hi)
    edges = lo + (hi - lo) * np.arange(1, bins) / bins
    idx = np.searchsorted(edges, vals, side="right")
    return np.bincount(idx, minlength=bins).astype(np.int64)


def mi_lower_bound(teacher: EmbeddingBatch, student: EmbeddingBatch, tau: float) -> MiBound:
    """Symmetric InfoNCE bound on teacher/student mutual information.

    bound = log(B - 1) - (L_T->S + L_S->T) / 2 over intra-modality
    similarity distributions at temperature tau.
    """
    t, s = teacher.array(), student.array()
    if t.shape != s.shape:
        raise MetricError(f"mi_lower_bound: shapes {t.shape} vs {s.shape}")
    if teacher.modality != student.modality:
        raise MetricError("mi_lower_bound: batches must share a modality")
    b = t.shape[0]
    if b < 2:
        raise MetricError("mi_lower_bound: need B >= 2 (N = B - 1 negatives)")

    def infonce(anchors, targets):
        logits = anchors @ targets.T / tau
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return float(-np.diagonal(logp).mean())

    l1 = infonce(t, s)
    l2 = infonce(s, t)
    n = b - 1
    return MiBound(n, l1, l2, float(np.log(n) - 0.5 * (l1 + l2)))
