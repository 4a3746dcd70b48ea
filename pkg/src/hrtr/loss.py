"""Masked focal loss over per-frame logits and its gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericFault

P_FLOOR = 1e-12
_LOG_FLOOR = np.log(P_FLOOR)


@dataclass(frozen=True)
class FocalSpec:
    """Focal-loss hyperparameters.

    ``alpha`` is a scalar or a length-C sequence of per-class weights
    indexed by the true class.
    """

    alpha: float | tuple[float, ...] = 25.0
    gamma: float = 2.0

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        if not (alpha > 0).all() or not np.isfinite(alpha).all():
            raise ConfigError("focal alpha must be positive")
        if not self.gamma >= 0:
            raise ConfigError("focal gamma must be non-negative")
        if alpha.size > 1:
            object.__setattr__(self, "alpha", tuple(float(a) for a in alpha))

    def alpha_for(self, labels: np.ndarray) -> np.ndarray | float:
        if isinstance(self.alpha, tuple):
            table = np.asarray(self.alpha)
            if labels.size and labels.max() >= table.size:
                raise ConfigError("per-class alpha vector shorter than the number of classes")
            return table[labels]
        return float(self.alpha)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _prepare(logits, labels, mask):
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if mask is None:
        mask = np.ones(labels.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[:-1] != labels.shape or mask.shape != labels.shape:
        raise ConfigError(
            f"shape mismatch: logits {logits.shape}, labels {labels.shape}, mask {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        raise ValueError("empty loss: mask selects no frames")
    if not np.isfinite(logits).all():
        raise NumericFault("non-finite logits in focal loss")
    C = logits.shape[-1]
    safe_labels = np.where(mask, labels, 0).astype(np.int64)
    if safe_labels.min() < 0 or safe_labels.max() >= C:
        raise ConfigError(f"label out of range for {C} classes")
    return logits, safe_labels, mask, count


def _frame_terms(logits, labels, spec):
    logp_all = log_softmax(logits)
    logp_raw = np.take_along_axis(logp_all, labels[..., None], axis=-1)[..., 0]
    logp = np.maximum(logp_raw, _LOG_FLOOR)
    p = np.exp(logp_raw)
    one_minus = -np.expm1(logp_raw)  # 1 - p without cancellation
    return logp_all, logp_raw, logp, p, one_minus


def focal_loss_per_frame(logits, labels, spec: FocalSpec) -> np.ndarray:
    """Unreduced loss ``-alpha (1-p_t)^gamma log p_t`` for every frame."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _, _, logp, _, one_minus = _frame_terms(logits, labels, spec)
    return -spec.alpha_for(labels) * one_minus ** spec.gamma * logp


def focal_loss(logits, labels, mask=None, spec: FocalSpec = FocalSpec()) -> float:
    """Mean focal loss over frames where ``mask`` is true."""
    logits, labels, mask, count = _prepare(logits, labels, mask)
    per_frame = focal_loss_per_frame(logits, labels, spec)
    return float(per_frame[mask].sum() / count)


def focal_loss_grad(logits, labels, mask=None, spec: FocalSpec = FocalSpec()) -> np.ndarray:
    """Gradient of :func:`focal_loss` with respect to ``logits``.

    Per frame, with ``p`` the true-class probability,
    ``dl/dz_j = -alpha [(1-p)^g - g p (1-p)^(g-1) log p] (onehot_j - softmax_j)``.
    The log clamp makes the ``(1-p)^g`` term vanish when ``p`` is below the floor.
    """
    logits, labels, mask, count = _prepare(logits, labels, mask)
    gamma = spec.gamma
    logp_all, logp_raw, logp, p, one_minus = _frame_terms(logits, labels, spec)

    direct = np.where(logp_raw >= _LOG_FLOOR, one_minus ** gamma, 0.0)
    if gamma == 0:
        focus = 0.0
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            focus = gamma * p * one_minus ** (gamma - 1) * logp
        focus = np.where(one_minus > 0, focus, 0.0)
    coeff = -spec.alpha_for(labels) * (direct - focus)

    probs = np.exp(logp_all)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    grad = coeff[..., None] * (onehot - probs)
    grad *= (mask / count)[..., None]
    return grad
