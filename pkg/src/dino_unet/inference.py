"""Sliding-window inference with Gaussian importance weighting."""

from __future__ import annotations

from typing import Callable

import numpy as np


def gaussian_weight_map(window: int, sigma_scale: float = 1.0 / 8) -> np.ndarray:
    """Separable Gaussian over a window, peak-normalized to 1."""
    sigma = window * sigma_scale
    c = (window - 1) / 2.0
    g = np.exp(-((np.arange(window) - c) ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.max()


def tile_starts(size: int, window: int, step: int) -> list[int]:
    """Window origins covering [0, size); the last tile is clamped inside."""
    starts = list(range(0, size - window + 1, step))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def sliding_window_infer(forward: Callable[[np.ndarray], np.ndarray], image: np.ndarray, window: int,
                         overlap: float = 0.5) -> np.ndarray:
    """Weighted average of per-tile logits over the whole image.

    Args:
        forward: maps [B,3,h,w] images to [B,C,h,w] logits.
        image: [B,3,H,W].
        window: square tile side; must be a multiple of 32.
        overlap: fraction of the window shared by neighbouring tiles.
    """
    if window % 32 or window <= 0:
        raise ValueError(f"window={window} must be a positive multiple of 32")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap={overlap} must lie in [0, 1)")
    _, _, h, w = image.shape
    if window > h or window > w or (window == h and window == w):
        return forward(image)
    step = max(1, int(window * (1.0 - overlap)))
    weight = gaussian_weight_map(window)
    acc = None
    norm = np.zeros((h, w), dtype=np.float64)
    for y in tile_starts(h, window, step):
        for x in tile_starts(w, window, step):
            logits = forward(image[:, :, y:y + window, x:x + window])
            if acc is None:
                acc = np.zeros(logits.shape[:2] + (h, w), dtype=np.float64)
            acc[:, :, y:y + window, x:x + window] += logits * weight
            norm[y:y + window, x:x + window] += weight
    return (acc / norm).astype(image.dtype)
