"""Fidelity-aware projection of adapter features to decoder widths.

Per scale: a shared low-rank context projection and a scale-specific one,
FiLM modulation of the specific branch by parameters generated from the
context branch, then a refinement block (1x1 conv, depthwise-separable conv,
squeeze-and-excitation) with a projection shortcut.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor
from .config import FapmConfig
from .params import ParamStore, he_normal

PREFIX = "fapm."
BASELINE_PREFIX = "fapm_baseline."


def has_shortcut_conv(rank: int, d_out: int) -> bool:
    return rank != d_out


def init_fapm(cfg: FapmConfig, seed: int, dtype=np.float64) -> ParamStore:
    rng = np.random.default_rng([seed, 0xFA9])
    store = ParamStore(dtype)
    r, d, k = cfg.rank, cfg.in_dim, cfg.dw_kernel

    def add(name, arr):
        store.add(PREFIX + name, arr)

    add("ctx.weight", he_normal(rng, (r, d), d))
    add("ctx.bias", np.zeros(r))
    for i, do in enumerate(cfg.out_dims):
        s = f"scale{i}."
        hid = cfg.se_hidden(do)
        add(s + "sp.weight", he_normal(rng, (r, d), d))
        add(s + "sp.bias", np.zeros(r))
        # Generator: zero weights, gamma-half bias 1, beta-half bias 0 => identity FiLM at init.
        add(s + "gen.weight", np.zeros((2 * r, r)))
        add(s + "gen.bias", np.concatenate([np.ones(r), np.zeros(r)]))
        add(s + "reduce.weight", he_normal(rng, (do, r), r))
        add(s + "reduce.bias", np.zeros(do))
        add(s + "dw.weight", he_normal(rng, (do, 1, k, k), k * k))
        add(s + "dw.bias", np.zeros(do))
        add(s + "pw.weight", he_normal(rng, (do, do), do))
        add(s + "pw.bias", np.zeros(do))
        add(s + "se.fc1.weight", he_normal(rng, (hid, do), do))
        add(s + "se.fc1.bias", np.zeros(hid))
        add(s + "se.fc2.weight", he_normal(rng, (do, hid), hid))
        add(s + "se.fc2.bias", np.zeros(do))
        if has_shortcut_conv(r, do):
            add(s + "shortcut.weight", he_normal(rng, (do, r), r))
            add(s + "shortcut.bias", np.zeros(do))
    return store


def init_baseline(out_dims: list[int], in_dim: int, seed: int, dtype=np.float64) -> ParamStore:
    rng = np.random.default_rng([seed, 0xB15])
    store = ParamStore(dtype)
    for i, do in enumerate(out_dims):
        store.add(f"{BASELINE_PREFIX}scale{i}.weight", he_normal(rng, (do, in_dim), in_dim))
        store.add(f"{BASELINE_PREFIX}scale{i}.bias", np.zeros(do))
    return store


def decompose(c_prime: Tensor, w_ctx: Tensor, b_ctx: Tensor | None, w_sp: Tensor,
              b_sp: Tensor | None) -> tuple[Tensor, Tensor]:
    """Shared-context and scale-specific rank-R projections of one scale."""
    if c_prime.shape[1] != w_ctx.shape[1] or c_prime.shape[1] != w_sp.shape[1]:
        raise ValueError(f"decompose: input channels {c_prime.shape[1]} vs weights {w_ctx.shape}, {w_sp.shape}")
    return ops.conv1x1(c_prime, w_ctx, b_ctx), ops.conv1x1(c_prime, w_sp, b_sp)


def film_modulate(z_ctx: Tensor, z_sp: Tensor, gen_w: Tensor, gen_b: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Return (gamma, beta, gamma * z_sp + beta)."""
    if z_ctx.shape != z_sp.shape:
        raise ValueError(f"film_modulate: {z_ctx.shape} vs {z_sp.shape}")
    r = z_sp.shape[1]
    gamma, beta = ops.split(ops.conv1x1(z_ctx, gen_w, gen_b), [r, r], axis=1)
    return gamma, beta, ops.add(ops.mul(gamma, z_sp), beta)


def squeeze_excite(y: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Channel gate sigmoid(MLP(GAP(y))) in (0, 1), shape [B, C]."""
    h = ops.relu(ops.linear(ops.global_avg_pool(y), params[prefix + "fc1.weight"], params[prefix + "fc1.bias"]))
    return ops.sigmoid(ops.linear(h, params[prefix + "fc2.weight"], params[prefix + "fc2.bias"]))


def refine(z_mod: Tensor, params: ParamStore, prefix: str, cfg: FapmConfig) -> Tensor:
    k = cfg.dw_kernel
    y = ops.conv1x1(z_mod, params[prefix + "reduce.weight"], params[prefix + "reduce.bias"])
    y = ops.conv2d(y, params[prefix + "dw.weight"], params[prefix + "dw.bias"], padding=k // 2, groups=y.shape[1])
    if cfg.dw_activation:
        y = ops.gelu(y)
    y = ops.conv1x1(y, params[prefix + "pw.weight"], params[prefix + "pw.bias"])
    s = squeeze_excite(y, params, prefix + "se.")
    if prefix + "shortcut.weight" in params:
        short = ops.conv1x1(z_mod, params[prefix + "shortcut.weight"], params[prefix + "shortcut.bias"])
    else:
        short = z_mod
    return ops.add(ops.channel_scale(y, s), short)


def fapm_scale(c_prime: Tensor, i: int, params: ParamStore, cfg: FapmConfig) -> dict[str, Tensor]:
    """All intermediates of one scale, keyed by name; ``out`` is the skip map."""
    s = f"{PREFIX}scale{i}."
    z_ctx, z_sp = decompose(c_prime, params[PREFIX + "ctx.weight"], params[PREFIX + "ctx.bias"],
                            params[s + "sp.weight"], params[s + "sp.bias"])
    gamma, beta, z_mod = film_modulate(z_ctx, z_sp, params[s + "gen.weight"], params[s + "gen.bias"])
    out = refine(z_mod, params, s, cfg)
    return {"z_ctx": z_ctx, "z_sp": z_sp, "gamma": gamma, "beta": beta, "z_mod": z_mod, "out": out}


def fapm_forward(pyramid: list[Tensor], params: ParamStore, cfg: FapmConfig) -> list[Tensor]:
    if len(pyramid) != len(cfg.out_dims):
        raise ValueError(f"FAPM configured for {len(cfg.out_dims)} scales, got {len(pyramid)}")
    return [fapm_scale(c, i, params, cfg)["out"] for i, c in enumerate(pyramid)]


def baseline_forward(pyramid: list[Tensor], params: ParamStore) -> list[Tensor]:
    """Ablation projection: one plain 1x1 conv per scale."""
    return [ops.conv1x1(c, params[f"{BASELINE_PREFIX}scale{i}.weight"], params[f"{BASELINE_PREFIX}scale{i}.bias"])
            for i, c in enumerate(pyramid)]


def orthogonality_penalty(params: ParamStore) -> Tensor | None:
    """Hook for a decomposition regularizer; none is applied by default."""
    return None
