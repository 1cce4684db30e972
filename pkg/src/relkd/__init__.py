"""relkd: a desk-scale laboratory for multi-directional relational
knowledge distillation between dual-encoder models."""

__version__ = "0.1.0"

from .autodiff import Parameter, Tensor, apply, backward, grad_check
from .encoders import DualEncoder, EmbeddingBatch, EncoderParams, encode, init_encoder
from .losses import (LossBundle, LossWeights, SimilarityDistribution, Temperature,
                     TemperatureSet, clip_loss, clip_rd_total, fd_loss, hrd_loss,
                     icl_loss, kl_rows, similarity_distribution, vrd_ce_loss,
                     vrd_kl_loss, vrd_loss, xrd_loss)
from .data import PairedDataset, SyntheticSpec, generate, split
from .metrics import mi_lower_bound, pair_similarity_stats, similarity_histogram
from .evaluation import retrieval_recall, zero_shot_classify
from .trainer import MetricRecord, ModelConfig, TrainConfig, distill, lr_at, train_teacher
