"""Frozen ViT-style backbone stub with intermediate token-map taps.

Stands in for a pretrained foundation encoder: patch embedding plus a
learned positional grid, then pre-norm transformer blocks. Weights come
from a seeded random initialization and are never trained.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor
from .config import BackboneConfig
from .params import ParamStore, lecun_normal

PREFIX = "backbone."


def init_backbone(cfg: BackboneConfig, seed: int, dtype=np.float64) -> ParamStore:
    """Seeded init; every entry is frozen."""
    rng = np.random.default_rng([seed, 0xBAC])
    d, p = cfg.embed_dim, cfg.patch_size
    g = cfg.image_size // p
    hidden = cfg.mlp_ratio * d
    store = ParamStore(dtype)

    def add(name, arr):
        store.add(PREFIX + name, arr, trainable=False)

    add("patch_embed.weight", lecun_normal(rng, (d, 3, p, p), 3 * p * p))
    add("patch_embed.bias", np.zeros(d))
    add("pos_embed", rng.standard_normal((d, g, g)) * 0.02)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        add(b + "norm1.weight", np.ones(d))
        add(b + "norm1.bias", np.zeros(d))
        add(b + "attn.qkv.weight", lecun_normal(rng, (3 * d, d), d))
        add(b + "attn.qkv.bias", np.zeros(3 * d))
        add(b + "attn.proj.weight", lecun_normal(rng, (d, d), d))
        add(b + "attn.proj.bias", np.zeros(d))
        add(b + "norm2.weight", np.ones(d))
        add(b + "norm2.bias", np.zeros(d))
        add(b + "mlp.fc1.weight", lecun_normal(rng, (hidden, d), d))
        add(b + "mlp.fc1.bias", np.zeros(hidden))
        add(b + "mlp.fc2.weight", lecun_normal(rng, (d, hidden), hidden))
        add(b + "mlp.fc2.bias", np.zeros(d))
    return store


def backbone_entry_count(cfg: BackboneConfig) -> int:
    return 3 + 12 * cfg.depth


def backbone_param_count(cfg: BackboneConfig) -> int:
    d, p = cfg.embed_dim, cfg.patch_size
    g = cfg.image_size // p
    h = cfg.mlp_ratio * d
    per_block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (h * d + h) + (d * h + d)
    return d * 3 * p * p + d + d * g * g + cfg.depth * per_block


def _attention(x: Tensor, params: ParamStore, prefix: str, num_heads: int) -> Tensor:
    bsz, t, d = x.shape
    dh = d // num_heads
    qkv = ops.linear(x, params[prefix + "qkv.weight"], params[prefix + "qkv.bias"])
    qkv = ops.transpose(ops.reshape(qkv, (bsz, t, 3, num_heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = (ops.reshape(s, (bsz, num_heads, t, dh)) for s in ops.split(qkv, [1, 1, 1], axis=0))
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    out = ops.matmul(ops.softmax(scores, axis=-1), v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (bsz, t, d))
    return ops.linear(out, params[prefix + "proj.weight"], params[prefix + "proj.bias"])


def _block(x: Tensor, params: ParamStore, prefix: str, num_heads: int) -> Tensor:
    h = ops.layer_norm(x, params[prefix + "norm1.weight"], params[prefix + "norm1.bias"])
    x = ops.add(x, _attention(h, params, prefix + "attn.", num_heads))
    h = ops.layer_norm(x, params[prefix + "norm2.weight"], params[prefix + "norm2.bias"])
    h = ops.gelu(ops.linear(h, params[prefix + "mlp.fc1.weight"], params[prefix + "mlp.fc1.bias"]))
    h = ops.linear(h, params[prefix + "mlp.fc2.weight"], params[prefix + "mlp.fc2.bias"])
    return ops.add(x, h)


def backbone_forward(x: Tensor, cfg: BackboneConfig, params: ParamStore, num_taps: int = 4) -> list[Tensor]:
    """Return one [B, D, H/patch, W/patch] token map per tap layer."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"backbone expects [B,3,H,W], got {x.shape}")
    bsz, _, h, w = x.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise ValueError(f"backbone input H={h}, W={w} must be multiples of patch_size={p}")
    taps = cfg.taps(num_taps)
    gh, gw = h // p, w // p
    d = cfg.embed_dim
    feat = ops.conv2d(x, params[PREFIX + "patch_embed.weight"], params[PREFIX + "patch_embed.bias"], stride=p)
    pos = params[PREFIX + "pos_embed"]
    if pos.shape[1:] != (gh, gw):
        pos = ops.reshape(ops.bilinear_resize(ops.reshape(pos, (1,) + pos.shape), gh, gw), (d, gh, gw))
    feat = ops.bias_add(feat, pos)
    tokens = ops.transpose(ops.reshape(feat, (bsz, d, gh * gw)), (0, 2, 1))
    outs = []
    wanted = set(taps)
    for i in range(1, cfg.depth + 1):
        tokens = _block(tokens, params, f"{PREFIX}blocks.{i - 1}.", cfg.num_heads)
        if i in wanted:
            fmap = ops.reshape(ops.transpose(tokens, (0, 2, 1)), (bsz, d, gh, gw))
            outs.append(fmap)
        if i >= taps[-1]:
            break
    return outs
