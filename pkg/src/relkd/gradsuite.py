"""Finite-difference validation of every loss gradient.

Treats raw (pre-normalization) student embedding matrices and the learnable
log-temperatures as the checked parameters; teacher embeddings are constants.
Shared by the test suite and the grad-check CLI command.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, grad_check
from .encoders import EmbeddingBatch
from .losses import (LossWeights, TemperatureSet, clip_loss, clip_rd_total,
                     fd_loss, hrd_loss, icl_loss, vrd_ce_loss, vrd_kl_loss,
                     vrd_loss, xrd_loss)


def _normed_batch(raw: Tensor, network: str, modality: str) -> EmbeddingBatch:
    return EmbeddingBatch(raw.l2_normalize_rows(), network, modality)


def make_inputs(seed: int, b: int = 4, d: int = 8):
    """Random raw student params, constant teacher embeddings, fresh temperatures."""
    rng = np.random.default_rng(seed)
    raw_v = Parameter(Tensor(rng.standard_normal((b, d))), name="raw_v_s")
    raw_s = Parameter(Tensor(rng.standard_normal((b, d))), name="raw_s_s")
    t_img = rng.standard_normal((b, d))
    t_txt = rng.standard_normal((b, d))
    t_img /= np.linalg.norm(t_img, axis=1, keepdims=True)
    t_txt /= np.linalg.norm(t_txt, axis=1, keepdims=True)
    v_t = EmbeddingBatch(Tensor(t_img), "teacher", "image")
    s_t = EmbeddingBatch(Tensor(t_txt), "teacher", "text")
    return raw_v, raw_s, v_t, s_t


def loss_closures(seed: int, b: int = 4, d: int = 8) -> dict:
    """Name -> (f, params) pairs for grad_check, one per loss."""
    raw_v, raw_s, v_t, s_t = make_inputs(seed, b, d)
    taus = TemperatureSet()
    # perturb temperatures away from a shared init so gradients are generic
    rng = np.random.default_rng(seed + 1000)
    for p in taus.learnable_params():
        p.set_data(p.data + 0.1 * rng.standard_normal())

    def student(params):
        v = _normed_batch(params[0].tensor, "student", "image")
        s = _normed_batch(params[1].tensor, "student", "text")
        return v, s

    base = [raw_v, raw_s]
    weights = LossWeights(alpha=2000.0, beta=1.0, lam=1.0)

    closures = {
        "clip": (lambda ps: clip_loss(*student(ps), taus.tau_task),
                 base + [taus.tau_task.param]),
        "fd": (lambda ps: fd_loss(v_t, s_t, *student(ps)), base),
        "icl": (lambda ps: icl_loss(*student(ps), v_t, s_t, taus.tau_task),
                base + [taus.tau_task.param]),
        "hrd": (lambda ps: hrd_loss(v_t, s_t, *student(ps), taus.tau_teacher, taus.tau_student),
                base + [taus.tau_student.param]),
        "vrd_ce": (lambda ps: vrd_ce_loss(v_t, student(ps)[0], s_t, student(ps)[1],
                                          taus.tau_image, taus.tau_text),
                   base + [taus.tau_image.param, taus.tau_text.param]),
        "vrd_kl": (lambda ps: vrd_kl_loss(v_t, student(ps)[0], s_t, student(ps)[1],
                                          taus.tau_image, taus.tau_text),
                   base + [taus.tau_image.param, taus.tau_text.param]),
        "xrd": (lambda ps: xrd_loss(v_t, s_t, *student(ps), taus.tau_cross),
                base + [taus.tau_cross.param]),
        "combined": (lambda ps: clip_rd_total({"FD", "ICL", "HRD", "VRD", "XRD"},
                                              weights, v_t, s_t, *student(ps), taus).total,
                     base + [p for p in taus.learnable_params()]),
    }
    return closures


def run_grad_suite(seeds=range(5), b: int = 4, d: int = 8, h: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per loss over the given seeds."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for name, (f, params) in loss_closures(seed, b, d).items():
            err = grad_check(f, params, h=h)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
