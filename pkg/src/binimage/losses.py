"""Loss functions: clamped cross-entropy, smooth-L1 embedding loss, composite.

The embedding loss compares a student embedding batch against teacher
targets that are held constant: gradients are produced for the student
side only, which is the stop-gradient contract the trainer relies on.
All reductions are means, so loss magnitudes are stable across batch
sizes and the composite weighting keeps one scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadConfig, BatchMismatch, NonFinite, ShapeMismatch


@dataclass
class LossConfig:
    """Knee width for the embedding loss, composite weight, and log clamp."""

    beta: float = 0.5
    lambda_weight: float = 1.0
    log_epsilon: float = 1e-12
    normalize_targets: bool = False

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise BadConfig(f"beta must be > 0, got {self.beta}")
        if self.lambda_weight < 0:
            raise BadConfig(f"lambda_weight must be >= 0, got {self.lambda_weight}")
        if not 0 < self.log_epsilon < 1:
            raise BadConfig(f"log_epsilon must be in (0,1), got {self.log_epsilon}")


@dataclass
class LossReport:
    """Per-step loss values; composite == ce + lambda * d2v by construction."""

    ce: float
    d2v: float
    composite: float
    batch_size: int


def one_hot(labels: np.ndarray, families: int) -> np.ndarray:
    """Integer labels -> (m, families) one-hot rows."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeMismatch(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= families):
        raise BadConfig(f"labels out of range [0, {families})")
    return np.eye(families, dtype=np.float64)[labels]


def cross_entropy(probs: np.ndarray, labels_onehot: np.ndarray, config: LossConfig | None = None) -> float:
    """Mean negative log-likelihood of the true class, log clamped at epsilon."""
    config = config or LossConfig()
    probs = np.asarray(probs, dtype=np.float64)
    labels_onehot = np.asarray(labels_onehot, dtype=np.float64)
    if probs.ndim != 2 or labels_onehot.ndim != 2:
        raise ShapeMismatch("probs and labels must be (m, F) matrices")
    if probs.shape != labels_onehot.shape:
        raise BatchMismatch(f"probs {probs.shape} vs labels {labels_onehot.shape}")
    if probs.shape[0] < 1:
        raise BatchMismatch("empty batch")
    clamped = np.maximum(probs, config.log_epsilon)
    return float(-(labels_onehot * np.log(clamped)).sum() / probs.shape[0])


def cross_entropy_grad_logits(probs: np.ndarray, labels_onehot: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean cross-entropy w.r.t. the pre-softmax logits."""
    if probs.shape != labels_onehot.shape:
        raise BatchMismatch(f"probs {probs.shape} vs labels {labels_onehot.shape}")
    return (probs - labels_onehot) / probs.shape[0]


def _smooth_l1(diff: np.ndarray, beta: float) -> np.ndarray:
    """Per-element loss: quadratic inside the knee, linear outside."""
    adiff = np.abs(diff)
    return np.where(adiff <= beta, 0.5 * diff * diff / beta, adiff - 0.5 * beta)


def data2vec_loss(
    z_teacher: np.ndarray, z_student: np.ndarray, config: LossConfig | None = None
) -> float:
    """Mean smooth-L1 distance between teacher targets and student embeddings.

    The teacher side is a constant target: no gradient is defined for it
    (see data2vec_grad_student), matching a stop-gradient on the teacher.
    """
    config = config or LossConfig()
    z_teacher = np.asarray(z_teacher, dtype=np.float64)
    z_student = np.asarray(z_student, dtype=np.float64)
    if z_teacher.shape != z_student.shape:
        raise ShapeMismatch(f"teacher {z_teacher.shape} vs student {z_student.shape}")
    diff = z_teacher - z_student
    return float(_smooth_l1(diff, config.beta).mean())


def data2vec_grad_student(
    z_teacher: np.ndarray, z_student: np.ndarray, config: LossConfig | None = None
) -> np.ndarray:
    """Gradient of data2vec_loss w.r.t. the student embeddings only.

    Per element: (student - teacher)/beta inside the knee, its sign outside,
    divided by the element count for the mean reduction.
    """
    config = config or LossConfig()
    if z_teacher.shape != z_student.shape:
        raise ShapeMismatch(f"teacher {z_teacher.shape} vs student {z_student.shape}")
    diff = np.asarray(z_student, dtype=np.float64) - np.asarray(z_teacher, dtype=np.float64)
    grad = np.clip(diff / config.beta, -1.0, 1.0)
    return grad / diff.size


def composite_loss(ce: float, d2v: float, config: LossConfig | None = None) -> float:
    """ce + lambda * d2v; rejects non-finite inputs."""
    config = config or LossConfig()
    if not (np.isfinite(ce) and np.isfinite(d2v)):
        raise NonFinite(f"loss inputs must be finite, got ce={ce}, d2v={d2v}")
    return float(ce + config.lambda_weight * d2v)


def make_report(ce: float, d2v: float, config: LossConfig, batch_size: int) -> LossReport:
    return LossReport(
        ce=float(ce),
        d2v=float(d2v),
        composite=composite_loss(ce, d2v, config),
        batch_size=int(batch_size),
    )


def normalize_block(z: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Standardize each sample's embedding block to zero mean, unit variance.

    Optional target conditioning (config flag, default off): applied to the
    teacher side before the embedding loss when enabled.
    """
    z = np.asarray(z, dtype=np.float64)
    axes = tuple(range(1, z.ndim)) if z.ndim > 1 else (0,)
    mean = z.mean(axis=axes, keepdims=True)
    std = z.std(axis=axes, keepdims=True)
    return (z - mean) / (std + eps)
