"""Held-out evaluation: cross-modal retrieval recall and prototype
classification over normalized embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import EmbeddingBatch


class EvalError(Exception):
    pass


@dataclass
class RetrievalResult:
    i2t: dict[int, float]   # k -> recall@k, image queries
    t2i: dict[int, float]
    n_queries: int


def _recall_at_ks(sim: np.ndarray, ks) -> dict[int, float]:
    """Recall of the diagonal match; ties broken toward the lower index."""
    n = sim.shape[0]
    # stable sort on -sim keeps lower indices first among ties
    order = np.argsort(-sim, axis=1, kind="stable")
    ranks = np.argmax(order == np.arange(n)[:, None], axis=1)
    return {k: float(np.mean(ranks < k)) for k in ks}


def retrieval_recall(images: EmbeddingBatch, texts: EmbeddingBatch,
                     ks=(1, 5)) -> RetrievalResult:
    a, b = images.array(), texts.array()
    if a.shape[0] != b.shape[0]:
        raise EvalError(f"retrieval_recall: {a.shape[0]} images vs {b.shape[0]} texts")
    n = a.shape[0]
    if n < max(ks):
        raise EvalError(f"retrieval_recall: B={n} < max k {max(ks)}")
    sim = a @ b.T
    return RetrievalResult(i2t=_recall_at_ks(sim, ks),
                           t2i=_recall_at_ks(sim.T, ks),
                           n_queries=n)


def class_prototypes(texts: EmbeddingBatch, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """L2-normalized per-class mean of text embeddings."""
    t = texts.array()
    protos = np.zeros((n_classes, t.shape[1]))
    for c in range(n_classes):
        rows = t[labels == c]
        if len(rows) == 0:
            raise EvalError(f"class_prototypes: class {c} has no members")
        protos[c] = rows.mean(axis=0)
    norms = np.linalg.norm(protos, axis=1, keepdims=True)
    return protos / norms


def zero_shot_classify(samples: EmbeddingBatch, prototypes: np.ndarray,
                       labels: np.ndarray) -> float:
    """Fraction of samples whose nearest prototype matches the label."""
    if np.any(labels < 0) or np.any(labels >= prototypes.shape[0]):
        raise EvalError("zero_shot_classify: label out of range")
    sim = samples.array() @ prototypes.T
    preds = np.argmax(sim, axis=1)   # argmax ties resolve to the lower index
    return float(np.mean(preds == labels))
