"""scikit-learn style wrapper so the segmenter composes with sklearn tooling."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import ModelConfig, TrainConfig
from .data import SegSample
from .decoder import predict_mask
from .inference import sliding_window_infer
from .metrics import evaluate_masks
from .train import train_model


def check_images(X, multiple: int = 32) -> np.ndarray:
    """Validate a [N, 3, H, W] float batch with H, W multiples of ``multiple``."""
    X = check_array(X, allow_nd=True, dtype=(np.float32, np.float64), ensure_2d=False)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"expected images of shape [N, 3, H, W], got {X.shape}")
    if X.shape[2] % multiple or X.shape[3] % multiple:
        raise ValueError(f"image height and width must be multiples of {multiple}, got {X.shape[2:]}")
    return X


def check_masks(y, X: np.ndarray, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (X.shape[0],) + X.shape[2:]:
        raise ValueError(f"masks of shape {y.shape} do not match images {X.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"masks must be integer labels, got dtype {y.dtype}")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"mask labels must lie in [0, {num_classes})")
    return y.astype(np.int64)


class DinoUNetSegmenter(ClassifierMixin, BaseEstimator):
    """Pixel-wise segmenter: frozen ViT stub + adapter + FAPM + U-Net decoder.

    ``fit`` trains every non-backbone parameter with Adam and polynomial
    learning-rate decay on Dice + cross-entropy. ``predict`` returns integer
    masks, optionally through Gaussian-weighted sliding-window inference.
    """

    def __init__(self, num_classes=4, embed_dim=32, rank=16, out_dims=(16, 32, 64, 128), projection="fapm",
                 epochs=50, steps_per_epoch=10, lr=1e-3, batch_size=4, dtype="float32", window=0,
                 overlap=0.5, random_state=0):
        self.num_classes = num_classes
        self.embed_dim = embed_dim
        self.rank = rank
        self.out_dims = out_dims
        self.projection = projection
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.lr = lr
        self.batch_size = batch_size
        self.dtype = dtype
        self.window = window
        self.overlap = overlap
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig.build(variant="desk", embed_dim=self.embed_dim, rank=self.rank,
                                 out_dims=list(self.out_dims), num_classes=self.num_classes,
                                 seed=self.random_state, projection=self.projection)

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X, self.num_classes)
        train_cfg = TrainConfig(lr0=self.lr, epochs=self.epochs, steps_per_epoch=self.steps_per_epoch,
                                batch_size=self.batch_size, dtype=self.dtype, seed=self.random_state)
        samples = [SegSample(X[i].astype(np.float32), y[i].astype(np.int32), str(i)) for i in range(len(X))]
        result = train_model(self._model_config(), samples, train_cfg)
        self.model_ = result.model
        self.loss_curve_ = [r.total for r in result.losses]
        self.classes_ = np.arange(self.num_classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Per-class logits [N, C, H, W]."""
        check_is_fitted(self, "model_")
        X = check_images(X).astype(self.model_.dtype)
        if self.window:
            return sliding_window_infer(self.model_.predict_logits, X, self.window, self.overlap)
        return self.model_.predict_logits(X)

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return predict_mask(self.decision_function(X))

    def score(self, X, y, sample_weight=None) -> float:
        """Mean foreground Dice over (sample, class) pairs."""
        pred = self.predict(X)
        y = check_masks(y, check_images(X), self.num_classes)
        return evaluate_masks(pred, y, self.num_classes).mean_dice
