"""Dual-branch adapter: conv spatial prior pyramid enriched by ViT taps.

The spatial prior module (SPM) builds a stride-4..32 pyramid from the image.
Each interaction stage then lets every pyramid map query one backbone tap
through deformable cross-attention: a query predicts a few sampling offsets
around its own reference point plus softmax weights over them.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor
from .config import AdapterConfig
from .params import ParamStore, he_normal

PREFIX = "adapter."


# --------------------------------------------------------------------------- init

def init_spm(store: ParamStore, cfg: AdapterConfig, rng: np.random.Generator) -> None:
    c = cfg.stem_channels
    d = cfg.channels

    def conv(name, cout, cin, k):
        store.add(f"{PREFIX}spm.{name}.weight", he_normal(rng, (cout, cin, k, k), cin * k * k))
        store.add(f"{PREFIX}spm.{name}.bias", np.zeros(cout))

    conv("stem1", c, 3, 3)
    conv("stem2", c, c, 3)
    for i in range(1, cfg.num_scales):
        conv(f"down{i}", c, c, 3)
    for i in range(cfg.num_scales):
        conv(f"proj{i}", d, c, 1)


def offset_ring(num_heads: int, num_points: int) -> np.ndarray:
    """Unit-radius directions, one per (head, point), flattened as (x, y) pairs."""
    n = num_heads * num_points
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1).reshape(-1)


def init_attention(store: ParamStore, prefix: str, cfg: AdapterConfig, rng: np.random.Generator) -> None:
    d, h, k = cfg.channels, cfg.num_heads, cfg.num_points
    store.add(prefix + "value_proj.weight", he_normal(rng, (d, d), d))
    store.add(prefix + "value_proj.bias", np.zeros(d))
    # Zero-init heads give uniform weights and a zero output at init. The offset
    # bias spreads the points on a one-cell ring: if every point started on the
    # reference, their gradients would coincide forever and the softmax over
    # points would never receive a signal.
    store.add(prefix + "offsets.weight", np.zeros((h * k * 2, d)))
    store.add(prefix + "offsets.bias", offset_ring(h, k))
    store.add(prefix + "attn_weights.weight", np.zeros((h * k, d)))
    store.add(prefix + "attn_weights.bias", np.zeros(h * k))
    store.add(prefix + "output_proj.weight", np.zeros((d, d)))
    store.add(prefix + "output_proj.bias", np.zeros(d))


def init_adapter(cfg: AdapterConfig, seed: int, dtype=np.float64) -> ParamStore:
    rng = np.random.default_rng([seed, 0xADA])
    store = ParamStore(dtype)
    init_spm(store, cfg, rng)
    for i in range(cfg.num_scales):
        init_attention(store, f"{PREFIX}stage{i}.attn.", cfg, rng)
    return store


def spm_param_count(cfg: AdapterConfig) -> int:
    c, d, n = cfg.stem_channels, cfg.channels, cfg.num_scales
    return (c * 3 * 9 + c) + (c * c * 9 + c) + (n - 1) * (c * c * 9 + c) + n * (d * c + d)


def attention_param_count(cfg: AdapterConfig) -> int:
    d, h, k = cfg.channels, cfg.num_heads, cfg.num_points
    return (d * d + d) + (2 * h * k * d + 2 * h * k) + (h * k * d + h * k) + (d * d + d)


def adapter_param_count(cfg: AdapterConfig) -> int:
    return spm_param_count(cfg) + cfg.num_scales * attention_param_count(cfg)


# --------------------------------------------------------------------------- forward

def spm_forward(x: Tensor, params: ParamStore, cfg: AdapterConfig) -> list[Tensor]:
    """Image [B,3,H,W] -> maps [B,D,H/s,W/s] for each stride s."""
    _, _, h, w = x.shape
    smax = cfg.pyramid_strides[-1]
    if h % smax or w % smax:
        raise ValueError(f"SPM input H={h}, W={w} must be multiples of {smax}")
    p = PREFIX + "spm."

    def conv(t, name, stride, pad):
        return ops.relu(ops.conv2d(t, params[p + name + ".weight"], params[p + name + ".bias"], stride, pad))

    f = conv(x, "stem1", 2, 1)
    f = conv(f, "stem2", 2, 1)
    levels = [f]
    for i in range(1, cfg.num_scales):
        f = conv(f, f"down{i}", 2, 1)
        levels.append(f)
    return [ops.conv2d(lv, params[f"{p}proj{i}.weight"], params[f"{p}proj{i}.bias"])
            for i, lv in enumerate(levels)]


def reference_points(hq: int, wq: int) -> np.ndarray:
    """Normalized (x, y) cell centers of an hq x wq grid, row-major -> [hq*wq, 2]."""
    ys, xs = np.meshgrid((np.arange(hq) + 0.5) / hq, (np.arange(wq) + 0.5) / wq, indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=-1)


def deformable_cross_attn(query: Tensor, value: Tensor, params: ParamStore, prefix: str,
                          num_heads: int = 1, num_points: int = 4) -> Tensor:
    """Each query cell samples ``num_points`` locations of ``value`` per head.

    Offsets are predicted in units of one value cell (scaled by
    1/max(Hv, Wv) in normalized coordinates) around the query's reference
    point; sampled vectors are mixed by softmax weights over the points.
    """
    if query.shape[1] != value.shape[1] or query.shape[0] != value.shape[0]:
        raise ValueError(f"deformable_cross_attn: query {query.shape} and value {value.shape} disagree")
    bsz, d, hq, wq = query.shape
    _, _, hv, wv = value.shape
    nh, k = num_heads, num_points
    q = hq * wq

    qtok = ops.transpose(ops.reshape(query, (bsz, d, q)), (0, 2, 1))  # [B,Q,D]
    v = ops.conv1x1(value, params[prefix + "value_proj.weight"], params[prefix + "value_proj.bias"])

    off = ops.linear(qtok, params[prefix + "offsets.weight"], params[prefix + "offsets.bias"])
    off = ops.mul(ops.reshape(off, (bsz, q, nh, k, 2)), 1.0 / max(hv, wv))
    ref = reference_points(hq, wq).astype(query.dtype)
    ref = np.broadcast_to(ref[None, :, None, None, :], (bsz, q, nh, k, 2))
    pts = ops.add(off, Tensor(np.ascontiguousarray(ref)))
    pts = ops.reshape(ops.transpose(pts, (0, 2, 1, 3, 4)), (bsz * nh, q * k, 2))

    logits = ops.linear(qtok, params[prefix + "attn_weights.weight"], params[prefix + "attn_weights.bias"])
    attn = ops.softmax(ops.reshape(logits, (bsz, q, nh, k)), axis=-1)
    attn = ops.reshape(ops.transpose(attn, (0, 2, 1, 3)), (bsz * nh, q, k))

    vh = ops.reshape(v, (bsz * nh, d // nh, hv, wv))
    sampled = ops.reshape(ops.bilinear_sample(vh, pts), (bsz * nh, d // nh, q, k))
    mixed = ops.reshape(ops.weighted_sum(sampled, attn), (bsz, d, hq, wq))
    return ops.conv1x1(mixed, params[prefix + "output_proj.weight"], params[prefix + "output_proj.bias"])


def interaction_block(maps: list[Tensor], f_vit: Tensor, params: ParamStore, prefix: str,
                      cfg: AdapterConfig, residual: bool | None = None) -> list[Tensor]:
    """Update every pyramid map against one backbone tap."""
    residual = cfg.interaction_residual if residual is None else residual
    out = []
    for m in maps:
        a = deformable_cross_attn(m, f_vit, params, prefix, cfg.num_heads, cfg.num_points)
        out.append(ops.add(m, a) if residual else a)
    return out


def adapter_forward(x: Tensor, vit_feats: list[Tensor], params: ParamStore, cfg: AdapterConfig) -> list[Tensor]:
    if len(vit_feats) != cfg.num_scales:
        raise ValueError(f"adapter needs {cfg.num_scales} backbone taps, got {len(vit_feats)}")
    maps = spm_forward(x, params, cfg)
    for i, f in enumerate(vit_feats):
        maps = interaction_block(maps, f, params, f"{PREFIX}stage{i}.attn.", cfg)
    return maps
