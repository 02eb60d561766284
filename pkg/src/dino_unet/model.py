"""End-to-end assembly: backbone -> adapter -> projection -> decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter, backbone, decoder, fapm
from .autodiff import Tensor, no_grad
from .config import ModelConfig
from .params import ParamStore


@dataclass
class Model:
    cfg: ModelConfig
    params: ParamStore

    @property
    def dtype(self) -> np.dtype:
        return self.params.dtype

    def backbone_features(self, x: Tensor) -> list[Tensor]:
        with no_grad():
            return backbone.backbone_forward(x, self.cfg.backbone, self.params, self.cfg.adapter.num_scales)

    def skips(self, x: Tensor) -> list[Tensor]:
        feats = self.backbone_features(x)
        pyramid = adapter.adapter_forward(x, feats, self.params, self.cfg.adapter)
        if self.cfg.projection == "baseline":
            return fapm.baseline_forward(pyramid, self.params)
        return fapm.fapm_forward(pyramid, self.params, self.cfg.fapm)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        return decoder.decoder_forward(self.skips(x), self.params, self.cfg.decoder)

    __call__ = forward

    def predict_logits(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x).data


def build_model(cfg: ModelConfig, dtype=np.float64) -> Model:
    """Seeded init of all modules; the backbone is frozen, everything else trainable."""
    cfg.validate()
    store = ParamStore(dtype)
    store.merge(backbone.init_backbone(cfg.backbone, cfg.seed, dtype))
    store.merge(adapter.init_adapter(cfg.adapter, cfg.seed, dtype))
    if cfg.projection == "baseline":
        store.merge(fapm.init_baseline(cfg.fapm.out_dims, cfg.fapm.in_dim, cfg.seed, dtype))
    else:
        store.merge(fapm.init_fapm(cfg.fapm, cfg.seed, dtype))
    store.merge(decoder.init_decoder(cfg.decoder, cfg.seed, dtype))
    return Model(cfg, store)
