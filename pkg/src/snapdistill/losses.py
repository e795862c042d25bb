"""Cross-entropy, asymmetric distillation KL, and their weighted combination."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log_softmax, as_tensor
from .autodiff import ops
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    ce_term: float
    kl_term: float
    lambda_s: float
    lambda_t: float


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ContractError(f"class-index labels must be 1-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"label out of range [0, {num_classes}): {labels.min()}..{labels.max()}")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels.astype(np.int64)] = 1
    return out


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over the batch.

    ``labels`` is either a vector of class indices or a one-hot matrix shaped
    like ``logits``.
    """
    if logits.ndim != 2:
        raise ContractError(f"logits must be [batch, classes], got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != logits.shape:
            raise ContractError(f"one-hot labels {labels.shape} do not match logits {logits.shape}")
        targets = labels.astype(logits.dtype)
    else:
        targets = one_hot(labels, logits.shape[1], dtype=logits.dtype)
    picked = (log_softmax(logits) * Tensor(targets)).sum(axis=1)
    return -picked.mean()


def _teacher_array(teacher_logits) -> np.ndarray:
    # the teacher is frozen: only its values are used, never its graph
    return teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)


def kl_divergence(
    teacher_logits,
    student_logits: Tensor,
    teacher_temperature: float = 1.0,
    student_temperature: float = 1.0,
) -> Tensor:
    """Batch mean of KL(softmax(t / Tt) || softmax(s / Ts)).

    The teacher entropy term is kept so the value is a true KL; it carries no
    gradient.
    """
    if teacher_temperature <= 0 or student_temperature <= 0:
        raise ConfigError("temperatures must be positive")
    student_logits = as_tensor(student_logits)
    t = _teacher_array(teacher_logits).astype(student_logits.dtype, copy=False)
    if t.shape != student_logits.shape:
        raise ContractError(f"teacher logits {t.shape} do not match student logits {student_logits.shape}")
    log_p = log_softmax(Tensor(t / teacher_temperature)).data
    p = np.exp(log_p)
    neg_entropy = (p * log_p).sum(axis=1).mean()

    s = student_logits if student_temperature == 1 else ops.div(student_logits, student_temperature)
    cross = (log_softmax(s) * Tensor(p)).sum(axis=1).mean()
    return neg_entropy - cross


def kl_asymmetric(teacher_logits, student_logits: Tensor, temperature: float) -> Tensor:
    """Distillation KL with only the teacher softened by ``temperature``."""
    if temperature < 1:
        warnings.warn(f"distillation temperature {temperature} < 1 sharpens the teacher", stacklevel=2)
    return kl_divergence(teacher_logits, student_logits, temperature, 1.0)


def kl_symmetric(teacher_logits, student_logits: Tensor, temperature: float) -> Tensor:
    """Classic distillation KL with both sides softened by ``temperature``."""
    return kl_divergence(teacher_logits, student_logits, temperature, temperature)


def sd_loss(
    student_logits: Tensor,
    labels,
    teacher_logits=None,
    weights: tuple[float, float] = (1.0, 0.0),
    temperature: float = 1.0,
) -> tuple[Tensor, LossBreakdown]:
    """lambda_s * CE + lambda_t * KL(teacher / T || student).

    With ``lambda_t == 0`` no teacher may be passed and the result is exactly
    ``lambda_s * ce_loss``.
    """
    lambda_s, lambda_t = float(weights[0]), float(weights[1])
    if lambda_t < 0 or lambda_s < 0:
        raise ConfigError(f"loss weights must be non-negative, got {weights}")
    if lambda_t > 0 and teacher_logits is None:
        raise ContractError("lambda_t > 0 requires teacher logits")
    if lambda_t == 0 and teacher_logits is not None:
        raise ContractError("teacher logits given but lambda_t == 0")

    ce = ce_loss(student_logits, labels)
    total = ce * lambda_s
    kl_value = 0.0
    if lambda_t > 0:
        kl = kl_asymmetric(teacher_logits, student_logits, temperature)
        total = total + kl * lambda_t
        kl_value = kl.item()
    breakdown = LossBreakdown(
        total=total.item(), ce_term=ce.item(), kl_term=kl_value, lambda_s=lambda_s, lambda_t=lambda_t
    )
    return total, breakdown
