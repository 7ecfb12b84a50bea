"""Classify executables as grayscale images and audit the learned embeddings.

The pipeline: raw byte streams become fixed-size grayscale images
(:mod:`binimage.preprocess`), labeled corpora are built, split, cached, or
synthesized (:mod:`binimage.dataset`), and a pure-numpy CNN encoder with a
residual-MLP softmax head (:mod:`binimage.model`) trains under a composite
objective (:mod:`binimage.trainer`): supervised cross-entropy plus a
self-distillation loss in which the student sees block-masked images
(:mod:`binimage.masking`) and regresses the embeddings an EMA teacher
(:mod:`binimage.ema`) produces on the unmasked originals
(:mod:`binimage.losses`). Trained embeddings are exported, projected,
scored for cluster quality, and checked for novelty
(:mod:`binimage.analysis`, :mod:`binimage.svg`), and the whole pipeline is
scriptable through the ``binimage`` command (:mod:`binimage.cli`).
"""

from .analysis import (
    EmbeddingTable,
    FamilyThresholds,
    NoveltyRow,
    Projection2D,
    cluster_quality,
    export_embeddings,
    family_thresholds,
    novelty_report,
    novelty_score,
    pca_2d,
    project_2d,
)
from .dataset import (
    LabeledCorpus,
    LabeledSample,
    SplitSpec,
    load_cache,
    load_corpus,
    save_cache,
    stratified_split,
    synth_corpus,
)
from .ema import EmaConfig, TeacherState, ema_update, init_teacher
from .errors import BinImageError, RuntimeFailure, ValidationError
from .losses import (
    LossConfig,
    LossReport,
    composite_loss,
    cross_entropy,
    cross_entropy_grad_logits,
    data2vec_grad_student,
    data2vec_loss,
)
from .masking import Mask, MaskConfig, apply_mask, generate_mask
from .model import (
    ModelConfig,
    ModelParams,
    encoder_forward,
    head_forward,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .preprocess import ByteStream, binary_to_image, image_from_file, write_png
from .svg import loss_curves_svg, scatter_svg
from .trainer import (
    EvalReport,
    MetricsRecord,
    TrainConfig,
    TrainState,
    evaluate,
    load_state,
    run_comparison,
    save_state,
    train,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "BinImageError",
    "ByteStream",
    "EmaConfig",
    "EmbeddingTable",
    "EvalReport",
    "FamilyThresholds",
    "LabeledCorpus",
    "LabeledSample",
    "LossConfig",
    "LossReport",
    "Mask",
    "MaskConfig",
    "MetricsRecord",
    "ModelConfig",
    "ModelParams",
    "NoveltyRow",
    "Projection2D",
    "RuntimeFailure",
    "SplitSpec",
    "TeacherState",
    "TrainConfig",
    "TrainState",
    "ValidationError",
    "apply_mask",
    "binary_to_image",
    "cluster_quality",
    "composite_loss",
    "cross_entropy",
    "cross_entropy_grad_logits",
    "data2vec_grad_student",
    "data2vec_loss",
    "ema_update",
    "encoder_forward",
    "evaluate",
    "export_embeddings",
    "family_thresholds",
    "generate_mask",
    "head_forward",
    "image_from_file",
    "init_model",
    "init_teacher",
    "load_cache",
    "load_checkpoint",
    "load_corpus",
    "load_state",
    "loss_curves_svg",
    "novelty_report",
    "novelty_score",
    "pca_2d",
    "predict",
    "project_2d",
    "run_comparison",
    "save_cache",
    "save_checkpoint",
    "save_state",
    "scatter_svg",
    "stratified_split",
    "synth_corpus",
    "train",
    "train_step",
    "write_png",
]
