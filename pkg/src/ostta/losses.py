"""Training objectives over the (num_known + 1)-way logits.

Every loss returns (value, gradient w.r.t. logits). The unknown class sits
at the last logit index. Ground-truth labels are always known indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import logsumexp, softmax


@dataclass(frozen=True)
class LossConfig:
    tau: float = 2.0       # softening temperature, > 1
    lam: float = 0.05      # weight of the logit-norm penalty
    enable_ua: bool = True
    enable_sce: bool = True

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


def _check_label(logits: np.ndarray, y: int) -> None:
    num_known = logits.shape[0] - 1
    if not 0 <= y < num_known:
        raise ValueError(f"label {y} outside known range [0, {num_known})")


def ce_loss(logits: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Standard cross-entropy over all num_known + 1 classes."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_label(logits, y)
    value = logsumexp(logits) - logits[y]
    grad = softmax(logits)
    grad[y] -= 1.0
    return value, grad


def ua_loss(logits: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Unknown-activation loss: negative log-likelihood of the unknown
    logit against every logit except the ground truth. The ground-truth
    logit does not appear, so its gradient is exactly zero; the unknown
    gradient is always negative, pulling that logit up under descent."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_label(logits, y)
    u = logits.shape[0] - 1
    mask = np.ones(logits.shape[0], dtype=bool)
    mask[y] = False
    value = logsumexp(logits[mask]) - logits[u]
    grad = np.zeros_like(logits)
    restricted = softmax(logits[mask])
    grad[mask] = restricted
    grad[u] -= 1.0
    return value, grad


def sce_loss(logits: np.ndarray, y: int, config: LossConfig) -> tuple[float, np.ndarray]:
    """Temperature-softened cross-entropy plus an L2 penalty on the logit
    vector. Penalty subgradient at the origin is taken as zero."""
    config.validate()
    logits = np.asarray(logits, dtype=np.float64)
    _check_label(logits, y)
    scaled = logits / config.tau
    value = logsumexp(scaled) - scaled[y]
    grad = softmax(scaled)
    grad[y] -= 1.0
    grad /= config.tau
    norm = np.linalg.norm(logits)
    if norm > 0:
        value += config.lam * norm
        grad += config.lam * logits / norm
    return value, grad


def ugd_loss(logits: np.ndarray, y: int, config: LossConfig) -> tuple[float, np.ndarray]:
    """Sum of the unknown-activation and softened-CE terms; either side can
    be ablated via config flags, but not both."""
    if not (config.enable_ua or config.enable_sce):
        raise ValueError("empty objective: both loss terms disabled")
    value = 0.0
    grad = np.zeros(np.asarray(logits).shape[0])
    if config.enable_ua:
        v, g = ua_loss(logits, y)
        value += v
        grad += g
    if config.enable_sce:
        v, g = sce_loss(logits, y, config)
        value += v
        grad += g
    return value, grad
