"""U-Net decoder over the projected skip connections."""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor
from .config import DecoderConfig
from .params import ParamStore, he_normal

PREFIX = "decoder."


def init_decoder(cfg: DecoderConfig, seed: int, dtype=np.float64) -> ParamStore:
    rng = np.random.default_rng([seed, 0xDEC])
    store = ParamStore(dtype)
    dims = cfg.skip_dims

    def conv(name, cout, cin, k):
        store.add(f"{PREFIX}{name}.weight", he_normal(rng, (cout, cin, k, k), cin * k * k))
        store.add(f"{PREFIX}{name}.bias", np.zeros(cout))

    for i in range(len(dims) - 2, -1, -1):
        cin = dims[i + 1] + dims[i]
        conv(f"up{i}.conv1", dims[i], cin, 3)
        conv(f"up{i}.conv2", dims[i], dims[i], 3)
    conv("head", cfg.num_classes, dims[0], 1)
    return store


def decoder_param_count(cfg: DecoderConfig) -> int:
    dims = cfg.skip_dims
    total = 0
    for i in range(len(dims) - 1):
        total += dims[i] * (dims[i + 1] + dims[i]) * 9 + dims[i]
        total += dims[i] * dims[i] * 9 + dims[i]
    return total + cfg.num_classes * dims[0] + cfg.num_classes


def decoder_forward(skips: list[Tensor], params: ParamStore, cfg: DecoderConfig) -> Tensor:
    """Skips ordered shallow -> deep; returns logits at ``final_upsample_factor`` x the shallowest size."""
    if len(skips) != len(cfg.skip_dims):
        raise ValueError(f"decoder expects {len(cfg.skip_dims)} skips, got {len(skips)}")
    for i, (s, d) in enumerate(zip(skips, cfg.skip_dims)):
        if s.ndim != 4 or s.shape[1] != d:
            raise ValueError(f"skip {i}: expected {d} channels, got shape {s.shape}")
        if i and (s.shape[2] * 2 != skips[i - 1].shape[2] or s.shape[3] * 2 != skips[i - 1].shape[3]):
            raise ValueError(f"skip {i} spatial {s.shape[2:]} is not half of skip {i - 1} {skips[i - 1].shape[2:]}")

    def conv(t, name, pad):
        return ops.conv2d(t, params[f"{PREFIX}{name}.weight"], params[f"{PREFIX}{name}.bias"], padding=pad)

    x = skips[-1]
    for i in range(len(skips) - 2, -1, -1):
        target = skips[i]
        x = ops.bilinear_resize(x, target.shape[2], target.shape[3])
        x = ops.concat([x, target], axis=1)
        x = ops.gelu(conv(x, f"up{i}.conv1", 1))
        x = ops.gelu(conv(x, f"up{i}.conv2", 1))
    logits = conv(x, "head", 0)
    f = cfg.final_upsample_factor
    return ops.bilinear_resize(logits, logits.shape[2] * f, logits.shape[3] * f)


def predict_mask(logits) -> np.ndarray:
    """Argmax over the class axis; ties go to the lowest class index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=1).astype(np.int64)
