"""Dino U-Net at desk scale: frozen ViT stub, deformable adapter, FAPM, U-Net decoder."""

from .autodiff import OpTape, Tensor, backward, no_grad
from .config import ModelConfig, RunConfig, TrainConfig
from .estimator import DinoUNetSegmenter
from .model import Model, build_model

__all__ = ["Tensor", "OpTape", "backward", "no_grad", "ModelConfig", "TrainConfig", "RunConfig", "Model",
           "build_model", "DinoUNetSegmenter"]
__version__ = "0.1.0"
