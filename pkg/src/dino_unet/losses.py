"""Soft Dice + cross-entropy training loss."""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor


def _check_target(logits: Tensor, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    c = logits.shape[1]
    if target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= c):
        raise ValueError(f"target labels must lie in [0, {c}); got range [{target.min()}, {target.max()}]")
    return target.astype(np.int64)


def one_hot(target: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    """[B,H,W] labels -> [B,C,H,W] indicator."""
    oh = np.eye(num_classes, dtype=dtype)[target]
    return np.ascontiguousarray(np.moveaxis(oh, -1, 1))


def dice_loss(logits: Tensor, target, eps: float = 1e-5, batch_dice: bool = False) -> Tensor:
    """1 - mean soft Dice over classes (background included).

    Per-sample Dice is averaged over the batch unless ``batch_dice`` pools
    the batch into a single region.
    """
    target = _check_target(logits, target)
    c = logits.shape[1]
    g = Tensor(one_hot(target, c, logits.dtype))
    p = ops.softmax(logits, axis=1)
    axes = (0, 2, 3) if batch_dice else (2, 3)
    inter = ops.sum(ops.mul(p, g), axis=axes)
    denom = ops.add(ops.sum(p, axis=axes), Tensor(g.data.sum(axis=axes)))
    dice = ops.div(ops.add(ops.mul(inter, 2.0), eps), ops.add(denom, eps))
    return ops.add(ops.neg(ops.mean(dice)), 1.0)


def ce_loss(logits: Tensor, target) -> Tensor:
    """Mean over pixels of -log softmax at the target class."""
    target = _check_target(logits, target)
    c = logits.shape[1]
    g = Tensor(one_hot(target, c, logits.dtype))
    logp = ops.log_softmax(logits, axis=1)
    n = target.size
    return ops.mul(ops.sum(ops.mul(logp, g)), -1.0 / n)


def total_loss(logits: Tensor, target, eps: float = 1e-5) -> tuple[Tensor, Tensor, Tensor]:
    """Return (dice + ce, dice, ce)."""
    d = dice_loss(logits, target, eps)
    ce = ce_loss(logits, target)
    return ops.add(d, ce), d, ce
