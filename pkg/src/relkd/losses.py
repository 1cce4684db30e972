"""Distillation objectives for dual-encoder teacher/student pairs.

All losses take row-normalized B x d embedding batches and return
differentiable scalar Tensors. Similarity distributions are exposed for
inspection alongside the scalars where that helps diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ContractError, DomainError, Parameter, ShapeError, Tensor
from .encoders import EmbeddingBatch

LOGIT_SCALE_CAP = 100.0
DEFAULT_TAU_INIT = 0.07


@dataclass
class SimilarityDistribution:
    """Row-stochastic B x B softmax over pairwise cosine similarities."""

    rows: Tensor
    anchor: tuple[str, str]       # (network, modality)
    target: tuple[str, str]
    temperature: float

    @property
    def batch_size(self) -> int:
        return self.rows.shape[0]


class Temperature:
    """Learnable temperature stored on the logit scale, log(1/tau).

    The effective multiplier 1/tau is clamped at LOGIT_SCALE_CAP before use.
    """

    def __init__(self, name: str, init_tau: float = DEFAULT_TAU_INIT, trainable: bool = True):
        if init_tau <= 0:
            raise DomainError(f"temperature {name}: init {init_tau} <= 0")
        self.param = Parameter(Tensor(np.log(1.0 / init_tau)), name=name, trainable=trainable)

    @property
    def name(self) -> str:
        return self.param.name

    @property
    def trainable(self) -> bool:
        return self.param.trainable

    def inv_tau(self) -> Tensor:
        """Differentiable logit scale 1/tau, clamped."""
        return self.param.tensor.exp().clip_max(LOGIT_SCALE_CAP)

    @property
    def tau(self) -> float:
        return 1.0 / min(float(np.exp(self.param.data)), LOGIT_SCALE_CAP)


@dataclass
class TemperatureSet:
    """One temperature per objective family; tau_teacher is frozen."""

    tau_task: Temperature = field(default_factory=lambda: Temperature("tau_task"))
    tau_teacher: Temperature = field(default_factory=lambda: Temperature("tau_teacher", trainable=False))
    tau_student: Temperature = field(default_factory=lambda: Temperature("tau_student"))
    tau_image: Temperature = field(default_factory=lambda: Temperature("tau_image"))
    tau_text: Temperature = field(default_factory=lambda: Temperature("tau_text"))
    tau_cross: Temperature = field(default_factory=lambda: Temperature("tau_cross"))

    def learnable_params(self) -> list[Parameter]:
        all_t = [self.tau_task, self.tau_teacher, self.tau_student,
                 self.tau_image, self.tau_text, self.tau_cross]
        return [t.param for t in all_t if t.trainable]

    @staticmethod
    def from_config(spec: dict | None, teacher_tau: float = DEFAULT_TAU_INIT) -> "TemperatureSet":
        """Build from {"tau_x": {"init": 0.07, "learnable": true}, ...} blocks.

        tau_teacher is always frozen at the teacher's trained value.
        """
        spec = spec or {}
        names = ("tau_task", "tau_student", "tau_image", "tau_text", "tau_cross")
        kwargs = {}
        for name in names:
            block = spec.get(name, {})
            kwargs[name] = Temperature(name,
                                       init_tau=float(block.get("init", DEFAULT_TAU_INIT)),
                                       trainable=bool(block.get("learnable", True)))
        return TemperatureSet(tau_teacher=Temperature("tau_teacher", init_tau=teacher_tau,
                                                      trainable=False),
                              **kwargs)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2000.0   # feature-distillation weight
    beta: float = 1.0       # interactive-contrastive weight
    lam: float = 1.0        # relational weight

    def __post_init__(self):
        for name in ("alpha", "beta", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"loss weight {name}={v} must be finite and >= 0")


RELATIONAL_LOSSES = ("HRD", "VRD", "XRD")
ALL_COMPONENTS = ("FD", "ICL", "HRD", "VRD", "XRD")


@dataclass
class LossBundle:
    task: Tensor
    total: Tensor
    fd: Optional[Tensor] = None
    icl: Optional[Tensor] = None
    hrd: Optional[Tensor] = None
    vrd_ce: Optional[Tensor] = None
    vrd_kl: Optional[Tensor] = None
    vrd: Optional[Tensor] = None
    xrd: Optional[Tensor] = None

    def scalars(self) -> dict[str, float]:
        out = {}
        for name in ("task", "fd", "icl", "hrd", "vrd_ce", "vrd_kl", "vrd", "xrd", "total"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t.item()
        return out


def _check_pair(a: EmbeddingBatch, b: EmbeddingBatch, op: str) -> None:
    if a.matrix.shape != b.matrix.shape:
        raise ShapeError(f"{op}: batch shapes {a.matrix.shape} vs {b.matrix.shape}")
    if a.matrix.shape[0] == 0:
        raise ContractError(f"{op}: empty batch")


def _logits(anchors: EmbeddingBatch, targets: EmbeddingBatch, tau: Temperature) -> Tensor:
    return anchors.matrix.matmul(targets.matrix.transpose()).mul(tau.inv_tau())


def similarity_distribution(anchors: EmbeddingBatch, targets: EmbeddingBatch,
                            tau: Temperature | float) -> SimilarityDistribution:
    """Row k = softmax over j of anchor_k . target_j / tau."""
    if not isinstance(tau, Temperature):
        tau = Temperature("tau_fixed", init_tau=float(tau), trainable=False)
    _check_pair(anchors, targets, "similarity_distribution")
    rows = _logits(anchors, targets, tau).row_softmax()
    return SimilarityDistribution(rows=rows,
                                  anchor=(anchors.network, anchors.modality),
                                  target=(targets.network, targets.modality),
                                  temperature=tau.tau)


def kl_rows(p: SimilarityDistribution, q: SimilarityDistribution) -> Tensor:
    """Batch-averaged row-wise KL(p || q), eps-floored logs, grads through both."""
    if p.rows.shape != q.rows.shape:
        raise ShapeError(f"kl_rows: {p.rows.shape} vs {q.rows.shape}")
    b = p.rows.shape[0]
    per_cell = p.rows.mul(p.rows.log().sub(q.rows.log()))
    return per_cell.sum().scale(1.0 / b)


def _infonce(anchors: EmbeddingBatch, targets: EmbeddingBatch, tau: Temperature) -> Tensor:
    """Mean over anchors of -log softmax probability of the aligned target."""
    dist = similarity_distribution(anchors, targets, tau)
    return dist.rows.select_diag().log().mean().negate()


def clip_loss(v_s: EmbeddingBatch, s_s: EmbeddingBatch, tau_task: Temperature) -> Tensor:
    """Symmetric InfoNCE over the student image/text batch, diagonal positives."""
    _check_pair(v_s, s_s, "clip_loss")
    i2t = _infonce(v_s, s_s, tau_task)
    t2i = _infonce(s_s, v_s, tau_task)
    return i2t.add(t2i).scale(0.5)


def fd_loss(v_t: EmbeddingBatch, s_t: EmbeddingBatch,
            v_s: EmbeddingBatch, s_s: EmbeddingBatch) -> Tensor:
    """Mean per-pair squared distance between teacher and student embeddings."""
    _check_pair(v_t, v_s, "fd_loss")
    _check_pair(s_t, s_s, "fd_loss")
    b = v_t.matrix.shape[0]
    img = v_t.matrix.sub(v_s.matrix).square().sum()
    txt = s_t.matrix.sub(s_s.matrix).square().sum()
    return img.add(txt).scale(1.0 / b)


def icl_loss(v_s: EmbeddingBatch, s_s: EmbeddingBatch,
             v_t: EmbeddingBatch, s_t: EmbeddingBatch, tau_task: Temperature) -> Tensor:
    """Student-vs-teacher cross-modal InfoNCE, averaged over both directions."""
    _check_pair(v_s, s_t, "icl_loss")
    _check_pair(s_s, v_t, "icl_loss")
    i2t = _infonce(v_s, s_t, tau_task)
    t2i = _infonce(s_s, v_t, tau_task)
    return i2t.add(t2i).scale(0.5)


def hrd_loss(v_t: EmbeddingBatch, s_t: EmbeddingBatch,
             v_s: EmbeddingBatch, s_s: EmbeddingBatch,
             tau_teacher: Temperature, tau_student: Temperature) -> Tensor:
    """KL-match within-network image<->text distributions, teacher to student.

    Sum of the two directions, not the average.
    """
    p_t = similarity_distribution(v_t, s_t, tau_teacher)
    p_s = similarity_distribution(v_s, s_s, tau_student)
    q_t = similarity_distribution(s_t, v_t, tau_teacher)
    q_s = similarity_distribution(s_s, v_s, tau_student)
    return kl_rows(p_t, p_s).add(kl_rows(q_t, q_s))


def _vrd_distributions(v_t, v_s, s_t, s_s, tau_image, tau_text):
    i_ts = similarity_distribution(v_t, v_s, tau_image)
    i_st = similarity_distribution(v_s, v_t, tau_image)
    t_ts = similarity_distribution(s_t, s_s, tau_text)
    t_st = similarity_distribution(s_s, s_t, tau_text)
    return i_ts, i_st, t_ts, t_st


def vrd_ce_loss(v_t: EmbeddingBatch, v_s: EmbeddingBatch,
                s_t: EmbeddingBatch, s_s: EmbeddingBatch,
                tau_image: Temperature, tau_text: Temperature) -> Tensor:
    """Intra-modality teacher/student InfoNCE, both anchors, modality-averaged."""
    ce_image = _infonce(v_t, v_s, tau_image).add(_infonce(v_s, v_t, tau_image))
    ce_text = _infonce(s_t, s_s, tau_text).add(_infonce(s_s, s_t, tau_text))
    return ce_image.add(ce_text).scale(0.5)


def vrd_kl_loss(v_t: EmbeddingBatch, v_s: EmbeddingBatch,
                s_t: EmbeddingBatch, s_s: EmbeddingBatch,
                tau_image: Temperature, tau_text: Temperature) -> Tensor:
    """Align image-image distributions to text-text ones, both anchor choices."""
    i_ts, i_st, t_ts, t_st = _vrd_distributions(v_t, v_s, s_t, s_s, tau_image, tau_text)
    return kl_rows(i_ts, t_ts).add(kl_rows(i_st, t_st)).scale(0.5)


def vrd_loss(v_t: EmbeddingBatch, v_s: EmbeddingBatch,
             s_t: EmbeddingBatch, s_s: EmbeddingBatch,
             tau_image: Temperature, tau_text: Temperature) -> Tensor:
    return vrd_ce_loss(v_t, v_s, s_t, s_s, tau_image, tau_text).add(
        vrd_kl_loss(v_t, v_s, s_t, s_s, tau_image, tau_text))


def _sym_kl(a: SimilarityDistribution, b: SimilarityDistribution) -> Tensor:
    return kl_rows(a, b).add(kl_rows(b, a)).scale(0.5)


def xrd_loss(v_t: EmbeddingBatch, s_t: EmbeddingBatch,
             v_s: EmbeddingBatch, s_s: EmbeddingBatch,
             tau_cross: Temperature) -> Tensor:
    """Symmetrized KL between the four cross-network cross-modal distributions."""
    r_ti_st = similarity_distribution(v_t, s_s, tau_cross)
    r_tt_si = similarity_distribution(s_t, v_s, tau_cross)
    r_si_tt = similarity_distribution(v_s, s_t, tau_cross)
    r_st_ti = similarity_distribution(s_s, v_t, tau_cross)
    teacher_to_student = _sym_kl(r_ti_st, r_tt_si)
    student_to_teacher = _sym_kl(r_si_tt, r_st_ti)
    return teacher_to_student.add(student_to_teacher).scale(0.5)


def clip_rd_total(enabled: set[str] | frozenset[str],
                  weights: LossWeights,
                  v_t: EmbeddingBatch, s_t: EmbeddingBatch,
                  v_s: EmbeddingBatch, s_s: EmbeddingBatch,
                  taus: TemperatureSet) -> LossBundle:
    """Task loss plus the enabled weighted distillation components.

    total = task + alpha*FD + beta*ICL + lam*(sum of enabled relational losses).
    """
    unknown = set(enabled) - set(ALL_COMPONENTS)
    if unknown:
        raise ContractError(f"unknown loss components: {sorted(unknown)}")

    task = clip_loss(v_s, s_s, taus.tau_task)
    total = task
    bundle = LossBundle(task=task, total=task)

    if "FD" in enabled:
        bundle.fd = fd_loss(v_t, s_t, v_s, s_s)
        total = total.add(bundle.fd.scale(weights.alpha))
    if "ICL" in enabled:
        bundle.icl = icl_loss(v_s, s_s, v_t, s_t, taus.tau_task)
        total = total.add(bundle.icl.scale(weights.beta))
    if "HRD" in enabled:
        bundle.hrd = hrd_loss(v_t, s_t, v_s, s_s, taus.tau_teacher, taus.tau_student)
        total = total.add(bundle.hrd.scale(weights.lam))
    if "VRD" in enabled:
        bundle.vrd_ce = vrd_ce_loss(v_t, v_s, s_t, s_s, taus.tau_image, taus.tau_text)
        bundle.vrd_kl = vrd_kl_loss(v_t, v_s, s_t, s_s, taus.tau_image, taus.tau_text)
        bundle.vrd = bundle.vrd_ce.add(bundle.vrd_kl)
        total = total.add(bundle.vrd.scale(weights.lam))
    if "XRD" in enabled:
        bundle.xrd = xrd_loss(v_t, s_t, v_s, s_s, taus.tau_cross)
        total = total.add(bundle.xrd.scale(weights.lam))

    bundle.total = total
    return bundle
