"""Two-phase training: task-only teacher training, then distillation of a
frozen teacher into a fresh student under any enabled loss combination.

AdamW with decoupled weight decay, linear warmup into cosine decay, fixed
seeded epoch shuffling. Everything is deterministic given (seed, config, data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ContractError, NumericError, Parameter, Tensor as _T, backward, zero_grads
from .data import PairedDataset
from .encoders import DualEncoder, EmbeddingBatch, encode_array
from .evaluation import class_prototypes, retrieval_recall, zero_shot_classify
from .losses import LossWeights, Temperature, TemperatureSet, clip_loss, clip_rd_total
from .metrics import mi_lower_bound, pair_similarity_stats


@dataclass(frozen=True)
class ModelConfig:
    image_dim: int = 32
    text_dim: int = 24
    teacher_hidden: int = 128
    student_hidden: int = 16
    embed_dim: int = 32


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    warmup_iters: int = 100
    batch_size: int = 64
    peak_lr: float = 1e-3
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    seed: int = 0
    enabled_losses: frozenset[str] = frozenset()
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2 (relational losses need negatives)")


@dataclass
class MetricRecord:
    """Per-epoch diagnostics; None marks components not enabled for the run."""

    epoch: int
    loss_task: float
    loss_total: float
    loss_fd: Optional[float] = None
    loss_icl: Optional[float] = None
    loss_hrd: Optional[float] = None
    loss_vrd_ce: Optional[float] = None
    loss_vrd_kl: Optional[float] = None
    loss_xrd: Optional[float] = None
    val_i2t_r1: float = 0.0
    val_t2i_r1: float = 0.0
    val_i2t_r5: float = 0.0
    val_t2i_r5: float = 0.0
    zs_acc: float = 0.0
    pos_mean: float = 0.0
    neg_mean: float = 0.0
    gap: float = 0.0
    mi_bound_image: float = 0.0
    mi_bound_text: float = 0.0


def lr_at(iteration: int, config: TrainConfig, total_iters: int) -> float:
    """Linear ramp 0 -> peak over warmup, then cosine decay to 0."""
    if iteration < 0 or iteration > total_iters:
        raise ContractError(f"lr_at: iteration {iteration} outside [0, {total_iters}]")
    warmup = config.warmup_iters
    if warmup >= total_iters:
        raise ContractError(f"lr_at: warmup {warmup} >= total iters {total_iters}")
    if iteration < warmup:
        return config.peak_lr * iteration / warmup
    progress = (iteration - warmup) / (total_iters - warmup)
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Bias-corrected adaptive moments with decoupled weight decay.

    Parameters named in `no_decay` (the learnable temperatures) skip decay.
    """

    def __init__(self, params: list[Parameter], config: TrainConfig,
                 no_decay: frozenset[str] = frozenset()):
        self.params = [p for p in params if p.trainable]
        self.config = config
        self.no_decay = no_decay
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.step_count = 0

    def step(self, lr: float) -> None:
        b1, b2 = self.config.betas
        eps = self.config.eps
        self.step_count += 1
        t = self.step_count
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {p.name}")
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            new = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
            if p.name not in self.no_decay:
                new = new - lr * self.config.weight_decay * p.data
            p.set_data(new)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    idx = rng.permutation(n)
    for start in range(0, n, batch_size):
        batch = idx[start:start + batch_size]
        if len(batch) >= 2:
            yield batch


def _eval_embeddings(model: DualEncoder, dataset: PairedDataset):
    img = encode_array(model.image_encoder, dataset.image_features)
    txt = encode_array(model.text_encoder, dataset.text_features)
    return (EmbeddingBatch(_T(img), model.network_tag, "image"),
            EmbeddingBatch(_T(txt), model.network_tag, "text"))


def train_teacher(config: TrainConfig, train_data: PairedDataset,
                  val_data: Optional[PairedDataset] = None):
    """Task-only training of a wide dual encoder; returns (teacher, tau_task, records)."""
    mc = config.model
    teacher = DualEncoder.init(mc.image_dim, mc.text_dim, mc.teacher_hidden,
                               mc.embed_dim, config.seed, "teacher")
    tau = Temperature("tau_task")
    params = teacher.parameters() + [tau.param]
    opt = AdamW(params, config, no_decay=frozenset({tau.name}))

    n = len(train_data)
    iters_per_epoch = max(1, sum(1 for _ in _epoch_batches(n, config.batch_size,
                                                           np.random.default_rng(0))))
    total_iters = config.epochs * iters_per_epoch
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))

    records: list[MetricRecord] = []
    it = 0
    for epoch in range(config.epochs):
        losses = []
        for batch in _epoch_batches(n, config.batch_size, shuffle_rng):
            zero_grads(params)
            v = teacher.encode_image(train_data.image_features[batch])
            s = teacher.encode_text(train_data.text_features[batch])
            loss = clip_loss(v, s, tau)
            val = loss.item()
            if not np.isfinite(val):
                raise NumericError(f"teacher loss non-finite at iteration {it}")
            backward(loss)
            opt.step(lr_at(it, config, total_iters))
            losses.append(val)
            it += 1
        rec = MetricRecord(epoch=epoch, loss_task=float(np.mean(losses)),
                           loss_total=float(np.mean(losses)))
        if val_data is not None:
            _fill_eval_metrics(rec, teacher, val_data, tau.tau, tau.tau)
        records.append(rec)
    return teacher, tau, records


def _fill_eval_metrics(rec: MetricRecord, student: DualEncoder, val_data: PairedDataset,
                       tau_image: float, tau_text: float,
                       teacher: Optional[DualEncoder] = None,
                       prototypes: Optional[np.ndarray] = None) -> None:
    img, txt = _eval_embeddings(student, val_data)
    rr = retrieval_recall(img, txt, ks=(1, 5))
    rec.val_i2t_r1, rec.val_i2t_r5 = rr.i2t[1], rr.i2t[5]
    rec.val_t2i_r1, rec.val_t2i_r5 = rr.t2i[1], rr.t2i[5]
    stats = pair_similarity_stats(img, txt)
    rec.pos_mean, rec.neg_mean, rec.gap = stats.pos_mean, stats.neg_mean, stats.gap
    if prototypes is not None:
        rec.zs_acc = zero_shot_classify(img, prototypes, val_data.concept_labels)
    if teacher is not None:
        t_img, t_txt = _eval_embeddings(teacher, val_data)
        rec.mi_bound_image = mi_lower_bound(t_img, img, tau_image).bound
        rec.mi_bound_text = mi_lower_bound(t_txt, txt, tau_text).bound


def distill(config: TrainConfig, teacher: DualEncoder, teacher_tau: float,
            train_data: PairedDataset, val_data: Optional[PairedDataset] = None,
            temperatures: Optional[dict] = None):
    """Distill the frozen teacher into a fresh student; returns (student, taus, records)."""
    mc = config.model
    teacher.set_trainable(False)
    teacher_snapshot = [p.data.copy() for p in teacher.parameters()]

    student = DualEncoder.init(mc.image_dim, mc.text_dim, mc.student_hidden,
                               mc.embed_dim, config.seed + 1, "student")
    taus = TemperatureSet.from_config(temperatures, teacher_tau=teacher_tau)
    temp_params = taus.learnable_params()
    params = student.parameters() + temp_params
    opt = AdamW(params, config, no_decay=frozenset(p.name for p in temp_params))

    n = len(train_data)
    iters_per_epoch = max(1, sum(1 for _ in _epoch_batches(n, config.batch_size,
                                                           np.random.default_rng(0))))
    total_iters = config.epochs * iters_per_epoch
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))

    records: list[MetricRecord] = []
    it = 0
    for epoch in range(config.epochs):
        sums: dict[str, float] = {}
        counts = 0
        for batch in _epoch_batches(n, config.batch_size, shuffle_rng):
            zero_grads(params)
            v_t = EmbeddingBatch(_T(encode_array(teacher.image_encoder,
                                                 train_data.image_features[batch])),
                                 "teacher", "image")
            s_t = EmbeddingBatch(_T(encode_array(teacher.text_encoder,
                                                 train_data.text_features[batch])),
                                 "teacher", "text")
            v_s = student.encode_image(train_data.image_features[batch])
            s_s = student.encode_text(train_data.text_features[batch])
            bundle = clip_rd_total(set(config.enabled_losses), config.weights,
                                   v_t, s_t, v_s, s_s, taus)
            scalars = bundle.scalars()
            if not np.isfinite(scalars["total"]):
                raise NumericError(f"distill loss non-finite at iteration {it}")
            backward(bundle.total)
            opt.step(lr_at(it, config, total_iters))
            for k, v in scalars.items():
                sums[k] = sums.get(k, 0.0) + v
            counts += 1
            it += 1

        means = {k: v / counts for k, v in sums.items()}
        rec = MetricRecord(epoch=epoch,
                           loss_task=means["task"], loss_total=means["total"],
                           loss_fd=means.get("fd"), loss_icl=means.get("icl"),
                           loss_hrd=means.get("hrd"),
                           loss_vrd_ce=means.get("vrd_ce"),
                           loss_vrd_kl=means.get("vrd_kl"),
                           loss_xrd=means.get("xrd"))
        if val_data is not None:
            n_classes = int(max(train_data.concept_labels.max(),
                                val_data.concept_labels.max())) + 1
            s_txt_train = EmbeddingBatch(_T(encode_array(student.text_encoder,
                                                         train_data.text_features)),
                                         "student", "text")
            protos = class_prototypes(s_txt_train, train_data.concept_labels, n_classes)
            _fill_eval_metrics(rec, student, val_data, taus.tau_image.tau,
                               taus.tau_text.tau, teacher=teacher, prototypes=protos)
        records.append(rec)

    for p, before in zip(teacher.parameters(), teacher_snapshot):
        if not np.array_equal(p.data, before):
            raise ContractError(f"teacher parameter {p.name} changed during distillation")
    return student, taus, records
