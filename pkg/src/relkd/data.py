"""Synthetic paired image/text features from a shared latent concept model.

Each concept owns one latent vector; modality features are fixed linear maps
of that latent plus isotropic Gaussian noise, so a learnable cross-modal
correspondence exists by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np


class DataError(Exception):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    latent_dim: int = 16
    image_dim: int = 32
    text_dim: int = 24
    n_concepts: int = 200
    samples_per_concept: int = 50
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        dims = (self.latent_dim, self.image_dim, self.text_dim,
                self.n_concepts, self.samples_per_concept)
        if min(dims) < 1:
            raise DataError(f"spec dims must be >= 1: {dims}")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise DataError(f"noise_sigma {self.noise_sigma} must be finite and >= 0")


@dataclass
class PairedDataset:
    image_features: np.ndarray   # N x image_dim
    text_features: np.ndarray    # N x text_dim
    concept_labels: np.ndarray   # N ints
    split_tags: np.ndarray       # N strings from {train, val, test}

    def __post_init__(self):
        n = len(self.concept_labels)
        if len(self.image_features) != n or len(self.text_features) != n or len(self.split_tags) != n:
            raise DataError("dataset arrays have mismatched lengths")

    def __len__(self) -> int:
        return len(self.concept_labels)

    def subset(self, idx: np.ndarray) -> "PairedDataset":
        return PairedDataset(self.image_features[idx], self.text_features[idx],
                             self.concept_labels[idx], self.split_tags[idx])


def generate(spec: SyntheticSpec) -> PairedDataset:
    """Deterministic dataset for a spec: concept latents, fixed A/B maps, noise."""
    rng = np.random.default_rng(spec.seed)
    a_map = rng.standard_normal((spec.latent_dim, spec.image_dim)) / np.sqrt(spec.latent_dim)
    b_map = rng.standard_normal((spec.latent_dim, spec.text_dim)) / np.sqrt(spec.latent_dim)
    latents = rng.standard_normal((spec.n_concepts, spec.latent_dim))

    n = spec.n_concepts * spec.samples_per_concept
    labels = np.repeat(np.arange(spec.n_concepts), spec.samples_per_concept)
    base_img = latents[labels] @ a_map
    base_txt = latents[labels] @ b_map
    img = base_img + spec.noise_sigma * rng.standard_normal((n, spec.image_dim))
    txt = base_txt + spec.noise_sigma * rng.standard_normal((n, spec.text_dim))
    return PairedDataset(img, txt, labels, np.full(n, "train", dtype=object))


def split(dataset: PairedDataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Concept-stratified shuffle into disjoint train/val/test datasets."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise DataError(f"fractions {fractions} must be positive and sum to 1")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[], [], []]
    for concept in np.unique(dataset.concept_labels):
        idx = np.flatnonzero(dataset.concept_labels == concept)
        rng.shuffle(idx)
        n = len(idx)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_val = min(n_val, n - n_train)
        buckets[0].extend(idx[:n_train])
        buckets[1].extend(idx[n_train:n_train + n_val])
        buckets[2].extend(idx[n_train + n_val:])
    tags = ("train", "val", "test")
    out = []
    for tag, bucket in zip(tags, buckets):
        if not bucket:
            raise DataError(f"split {tag!r} received zero rows")
        sub = dataset.subset(np.asarray(sorted(bucket)))
        sub.split_tags = np.full(len(sub), tag, dtype=object)
        out.append(sub)
    return tuple(out)


def save(dataset: PairedDataset, path: str) -> None:
    """One JSON record per line: {"img": [...], "txt": [...], "label": k, "split": "..."}."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(dataset)):
            rec = {
                "img": dataset.image_features[i].tolist(),
                "txt": dataset.text_features[i].tolist(),
                "label": int(dataset.concept_labels[i]),
                "split": str(dataset.split_tags[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def load(path: str) -> PairedDataset:
    imgs, txts, labels, tags = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                continue
            try:
                rec = json.loads(line)
                imgs.append(rec["img"])
                txts.append(rec["txt"])
                labels.append(int(rec["label"]))
                tags.append(str(rec["split"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"parse error at line {lineno}: {exc}") from exc
    if not imgs:
        return PairedDataset(np.zeros((0, 0)), np.zeros((0, 0)),
                             np.zeros(0, dtype=int), np.zeros(0, dtype=object))
    return PairedDataset(np.asarray(imgs, dtype=np.float64),
                         np.asarray(txts, dtype=np.float64),
                         np.asarray(labels, dtype=int),
                         np.asarray(tags, dtype=object))
