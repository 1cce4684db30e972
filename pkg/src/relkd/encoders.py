"""Toy dual encoders: per-modality 2-layer tanh perceptrons plus a linear
projection into a shared embedding space, rows L2-normalized."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import DomainError, Parameter, ShapeError, Tensor


class ConfigError(Exception):
    pass


@dataclass
class EmbeddingBatch:
    """B x d row-normalized embeddings tagged with network and modality."""

    matrix: Tensor
    network: str    # "teacher" | "student"
    modality: str   # "image" | "text"

    @property
    def batch_size(self) -> int:
        return self.matrix.shape[0]

    def detach(self) -> "EmbeddingBatch":
        return EmbeddingBatch(self.matrix.detach(), self.network, self.modality)

    def array(self) -> np.ndarray:
        return self.matrix.data


class EncoderParams:
    """Weights of one modality encoder.

    layers: [(W_in_hidden, b_hidden), (W_hidden_hidden, b_hidden)], tanh
    activations; projection: hidden x d, linear. `linear_mode` swaps tanh for
    identity (used by finite-difference-friendly unit tests).
    """

    def __init__(self, input_dim: int, hidden_dim: int, d: int, prefix: str,
                 rng: np.random.Generator, linear_mode: bool = False):
        if min(input_dim, hidden_dim, d) < 1:
            raise ConfigError(f"encoder dims must be >= 1, got {(input_dim, hidden_dim, d)}")
        self.widths = (input_dim, hidden_dim, d)
        self.linear_mode = linear_mode
        self.prefix = prefix

        def uniform(fan_in, shape, name):
            bound = 1.0 / np.sqrt(fan_in)
            return Parameter(Tensor(rng.uniform(-bound, bound, size=shape)), name=name)

        self.layers = [
            (uniform(input_dim, (input_dim, hidden_dim), f"{prefix}.w0"),
             Parameter(Tensor(np.zeros(hidden_dim)), name=f"{prefix}.b0")),
            (uniform(hidden_dim, (hidden_dim, hidden_dim), f"{prefix}.w1"),
             Parameter(Tensor(np.zeros(hidden_dim)), name=f"{prefix}.b1")),
        ]
        self.projection = uniform(hidden_dim, (hidden_dim, d), f"{prefix}.proj")

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in self.layers:
            out.extend([w, b])
        out.append(self.projection)
        return out

    def set_trainable(self, trainable: bool) -> None:
        for p in self.parameters():
            p.trainable = trainable
            p.tensor.requires_grad = trainable


def init_encoder(input_dim: int, hidden_dim: int, d: int, seed: int,
                 prefix: str = "enc", linear_mode: bool = False) -> EncoderParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    return EncoderParams(input_dim, hidden_dim, d, prefix, rng, linear_mode=linear_mode)


def encode(params: EncoderParams, features: np.ndarray | Tensor,
           network: str = "student", modality: str = "image") -> EmbeddingBatch:
    """Differentiable forward pass producing unit-norm rows."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.data.ndim != 2 or x.shape[1] != params.widths[0]:
        raise ShapeError(f"encode: features {x.shape} vs input_dim {params.widths[0]}")
    if not np.all(np.isfinite(x.data)):
        raise DomainError("encode: non-finite features")
    h = x
    for w, b in params.layers:
        h = h.matmul(w.tensor).add_rowvec(b.tensor)
        if not params.linear_mode:
            h = h.tanh()
    out = h.matmul(params.projection.tensor)
    norms = np.linalg.norm(out.data, axis=1)
    if np.any(norms < 1e-12):
        raise DomainError(f"encode: degenerate embedding row (norm {norms.min():.3e})")
    return EmbeddingBatch(out.l2_normalize_rows(), network, modality)


def encode_array(params: EncoderParams, features: np.ndarray) -> np.ndarray:
    """Graph-free forward pass; bitwise-identical values to encode()."""
    h = np.asarray(features, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.widths[0]:
        raise ShapeError(f"encode_array: features {h.shape} vs input_dim {params.widths[0]}")
    for w, b in params.layers:
        h = h @ w.data + b.data
        if not params.linear_mode:
            h = np.tanh(h)
    out = h @ params.projection.data
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DomainError("encode_array: degenerate embedding row")
    return out / norms


class DualEncoder:
    """Image encoder + text encoder sharing one output dimension d."""

    def __init__(self, image_encoder: EncoderParams, text_encoder: EncoderParams,
                 network_tag: str):
        if image_encoder.widths[2] != text_encoder.widths[2]:
            raise ConfigError("image and text encoders must project to the same d")
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        self.network_tag = network_tag

    @classmethod
    def init(cls, image_dim: int, text_dim: int, hidden_dim: int, d: int,
             seed: int, network_tag: str) -> "DualEncoder":
        ss = np.random.SeedSequence(seed).spawn(2)
        img = EncoderParams(image_dim, hidden_dim, d, f"{network_tag}.image",
                            np.random.default_rng(ss[0]))
        txt = EncoderParams(text_dim, hidden_dim, d, f"{network_tag}.text",
                            np.random.default_rng(ss[1]))
        return cls(img, txt, network_tag)

    def parameters(self) -> list[Parameter]:
        return self.image_encoder.parameters() + self.text_encoder.parameters()

    def set_trainable(self, trainable: bool) -> None:
        self.image_encoder.set_trainable(trainable)
        self.text_encoder.set_trainable(trainable)

    def encode_image(self, features, detach: bool = False) -> EmbeddingBatch:
        emb = encode(self.image_encoder, features, self.network_tag, "image")
        return emb.detach() if detach else emb

    def encode_text(self, features, detach: bool = False) -> EmbeddingBatch:
        emb = encode(self.text_encoder, features, self.network_tag, "text")
        return emb.detach() if detach else emb


# -- checkpoint I/O ------------------------------------------------------

def _encoder_to_dict(enc: EncoderParams) -> dict:
    return {
        "widths": list(enc.widths),
        "layers": [[w.data.tolist(), b.data.tolist()] for w, b in enc.layers],
        "projection": enc.projection.data.tolist(),
    }


def _encoder_from_dict(obj: dict, prefix: str) -> EncoderParams:
    widths = tuple(obj["widths"])
    enc = init_encoder(*widths, seed=0, prefix=prefix)
    for (w, b), (wv, bv) in zip(enc.layers, obj["layers"]):
        w.set_data(np.asarray(wv, dtype=np.float64))
        b.set_data(np.asarray(bv, dtype=np.float64))
    enc.projection.set_data(np.asarray(obj["projection"], dtype=np.float64))
    return enc


def save_checkpoint(model: DualEncoder, path: str, extra: Optional[dict] = None) -> None:
    doc = {
        "network_tag": model.network_tag,
        "image_encoder": _encoder_to_dict(model.image_encoder),
        "text_encoder": _encoder_to_dict(model.text_encoder),
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> tuple[DualEncoder, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    tag = doc["network_tag"]
    model = DualEncoder(_encoder_from_dict(doc["image_encoder"], f"{tag}.image"),
                        _encoder_from_dict(doc["text_encoder"], f"{tag}.text"),
                        tag)
    return model, doc.get("extra", {})
