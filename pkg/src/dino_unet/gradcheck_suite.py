"""Finite-difference checks over every primitive and composed module."""

from __future__ import annotations

from typing import Callable

import contextlib

import numpy as np

from . import adapter, decoder, fapm, losses, ops
from .autodiff import Tensor, no_grad
from .config import AdapterConfig, DecoderConfig, FapmConfig
from .gradcheck import GradcheckReport, gradcheck
from .params import ParamStore

EPS = 1e-4
TOL = 1e-4
PARAM_PROBES = 24  # probed coordinates per parameter tensor in composed modules


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    u = rng.standard_normal(shape)
    return Tensor(np.sign(u) * (0.1 + np.abs(u)), requires_grad=True)


def _randomize(store: ParamStore, rng, scale=0.3) -> ParamStore:
    for _, t in store.items():
        t.data = rng.standard_normal(t.shape) * scale
    return store


KINK_MARGIN = 1e-3  # min distance (value-grid pixels) of any sampling point from a bilinear kink


@contextlib.contextmanager
def _recorded_sample_points(sink: list):
    """Record (points, value shape) of every bilinear_sample call in the block."""
    original = ops.bilinear_sample

    def spy(value, points):
        sink.append((points.data.copy(), value.shape))
        return original(value, points)

    ops.bilinear_sample = spy
    try:
        yield sink
    finally:
        ops.bilinear_sample = original


def kink_distance(points: np.ndarray, value_shape) -> float:
    """Distance of the nearest sampling coordinate to a grid line or clamp edge, in pixels."""
    h, w = value_shape[-2:]
    dists = []
    for coord, n in ((points[..., 0] * w - 0.5, w), (points[..., 1] * h - 0.5, h)):
        nearest = np.clip(np.round(coord), 0, n - 1)
        dists.append(np.abs(coord - nearest).min(initial=np.inf))
    return float(min(dists))


def _smooth_instance(build, fn_of, seed: int, tries: int = 50):
    """Draw instances from ``build(rng)`` until all sampling points avoid kinks."""
    rng = np.random.default_rng([seed, 11])
    for _ in range(tries):
        inst = build(rng)
        seen: list = []
        with no_grad(), _recorded_sample_points(seen):
            fn_of(inst)()
        if all(kink_distance(p, shape) >= KINK_MARGIN for p, shape in seen):
            return inst
    raise RuntimeError("could not draw a kink-free instance")


def _check_store(name, fn, store: ParamStore, extra: list[Tensor], seed: int) -> GradcheckReport:
    names = list(store)
    tensors = [store[n] for n in names]
    rep = gradcheck(lambda *a: fn(), extra + tensors, EPS, TOL, name=name, seed=seed,
                    max_entries=PARAM_PROBES, input_names=[f"input{i}" for i in range(len(extra))] + names)
    return rep


# --------------------------------------------------------------------------- primitive instances

def _conv_instance(rng):
    cases = [
        dict(shape=(1, 2, 5, 5), w=(3, 2, 3, 3), stride=1, padding=1, groups=1),
        dict(shape=(2, 4, 6, 6), w=(4, 1, 3, 3), stride=1, padding=1, groups=4),
        dict(shape=(1, 4, 7, 7), w=(2, 2, 3, 3), stride=2, padding=1, groups=2),
        dict(shape=(1, 3, 4, 4), w=(5, 3, 1, 1), stride=1, padding=0, groups=1),
        dict(shape=(1, 3, 8, 8), w=(2, 3, 4, 4), stride=4, padding=0, groups=1),
    ]
    c = cases[rng.integers(len(cases))]
    x, w, b = _t(rng, *c["shape"]), _t(rng, *c["w"]), _t(rng, c["w"][0])
    return (lambda x, w, b: ops.conv2d(x, w, b, c["stride"], c["padding"], c["groups"])), [x, w, b]


def _sample_instance(rng):
    value = _t(rng, 2, 3, 4, 5)
    # keep points off the pixel grid lines and inside the centre hull
    u = rng.uniform(0.15, 0.85, size=(2, 6, 2))
    pts = Tensor(u, requires_grad=True)
    return ops.bilinear_sample, [value, pts]


PRIMITIVES: dict[str, Callable] = {
    "conv2d": _conv_instance,
    "bilinear_resize": lambda rng: ((lambda x: ops.bilinear_resize(x, 5, 7)), [_t(rng, 1, 2, 3, 4)]),
    "bilinear_sample": _sample_instance,
    "linear": lambda rng: (ops.linear, [_t(rng, 2, 3, 4), _t(rng, 5, 4), _t(rng, 5)]),
    "matmul": lambda rng: (ops.matmul, [_t(rng, 2, 3, 4), _t(rng, 2, 4, 5)]),
    "softmax": lambda rng: ((lambda x: ops.softmax(x, axis=1)), [_t(rng, 2, 4, 3)]),
    "log_softmax": lambda rng: ((lambda x: ops.log_softmax(x, axis=1)), [_t(rng, 2, 4, 3)]),
    "sigmoid": lambda rng: ((lambda x: ops.sigmoid(ops.mul(ops.sigmoid(x), 3.0))), [_t(rng, 3, 4, scale=2.0)]),
    "gelu": lambda rng: (ops.gelu, [_t(rng, 3, 4, scale=2.0)]),
    "relu": lambda rng: (ops.relu, [_away_from_zero(rng, 3, 4)]),
    "add": lambda rng: (ops.add, [_t(rng, 2, 3), _t(rng, 2, 3)]),
    "mul": lambda rng: (ops.mul, [_t(rng, 2, 3), _t(rng, 2, 3)]),
    "div": lambda rng: (ops.div, [_t(rng, 2, 3), _away_from_zero(rng, 2, 3)]),
    "exp_log": lambda rng: ((lambda x: ops.log(ops.add(ops.exp(x), 1.0))), [_t(rng, 2, 3)]),
    "concat": lambda rng: ((lambda a, b: ops.concat([a, b], axis=1)), [_t(rng, 2, 2, 3), _t(rng, 2, 4, 3)]),
    "split": lambda rng: ((lambda a: ops.mul(*ops.split(a, [2, 2], axis=1))), [_t(rng, 2, 4, 3)]),
    "reshape_transpose": lambda rng: ((lambda a: ops.transpose(ops.reshape(a, (3, 2, 4)), (2, 0, 1))),
                                      [_t(rng, 6, 4)]),
    "sum_mean": lambda rng: ((lambda a: ops.mul(ops.sum(a, axis=1), ops.mean(a, axis=1))), [_t(rng, 3, 4)]),
    "global_avg_pool": lambda rng: (ops.global_avg_pool, [_t(rng, 2, 3, 4, 5)]),
    "layer_norm": lambda rng: (ops.layer_norm, [_t(rng, 2, 3, 6), _t(rng, 6), _t(rng, 6)]),
    "bias_add": lambda rng: (ops.bias_add, [_t(rng, 2, 3, 4, 4), _t(rng, 3)]),
    "channel_scale": lambda rng: (ops.channel_scale, [_t(rng, 2, 3, 4, 4), _t(rng, 2, 3)]),
    "weighted_sum": lambda rng: (ops.weighted_sum, [_t(rng, 2, 3, 4, 5), _t(rng, 2, 4, 5)]),
}


# --------------------------------------------------------------------------- composed modules

def small_adapter_cfg() -> AdapterConfig:
    return AdapterConfig(num_scales=2, pyramid_strides=[4, 8], channels=4, num_points=2, num_heads=2,
                         spm_channels=3)


def check_interaction_stage(seed: int) -> GradcheckReport:
    cfg = small_adapter_cfg()
    prefix = "adapter.stage0.attn."

    def build(rng):
        store = ParamStore()
        adapter.init_attention(store, prefix, cfg, rng)
        _randomize(store, rng)
        store[prefix + "offsets.weight"].data *= 0.1
        maps = [_t(rng, 1, 4, 4, 4), _t(rng, 1, 4, 2, 2)]
        return store, maps, _t(rng, 1, 4, 3, 3)

    def fn_of(inst):
        store, maps, f_vit = inst

        def fn():
            out = adapter.interaction_block(maps, f_vit, store, prefix, cfg)
            return ops.add(ops.sum(ops.mul(out[0], out[0])), ops.sum(out[1]))
        return fn

    inst = _smooth_instance(build, fn_of, seed)
    return _check_store("adapter_stage", fn_of(inst), inst[0], inst[1] + [inst[2]], seed)


def check_adapter(seed: int) -> GradcheckReport:
    cfg = small_adapter_cfg()

    def build(rng):
        store = adapter.init_adapter(cfg, seed)
        for name, t in store.items():
            if ".attn." in name:
                t.data = rng.standard_normal(t.shape) * (0.02 if ".offsets." in name else 0.3)
        x = _t(rng, 1, 3, 32, 32)
        return store, x, [_t(rng, 1, 4, 3, 3), _t(rng, 1, 4, 3, 3)]

    def fn_of(inst):
        store, x, feats = inst

        def fn():
            out = adapter.adapter_forward(x, feats, store, cfg)
            return ops.add(ops.sum(ops.mul(out[0], out[0])), ops.sum(ops.mul(out[1], out[1])))
        return fn

    inst = _smooth_instance(build, fn_of, seed)
    return _check_store("adapter", fn_of(inst), inst[0], [inst[1]] + inst[2], seed)


def small_fapm_cfg() -> FapmConfig:
    return FapmConfig(rank=4, in_dim=5, out_dims=[6, 4], se_reduction=2)


def check_fapm(seed: int) -> GradcheckReport:
    rng = np.random.default_rng([seed, 3])
    cfg = small_fapm_cfg()
    store = _randomize(fapm.init_fapm(cfg, seed), rng)
    pyr = [_t(rng, 1, 5, 6, 6), _t(rng, 1, 5, 3, 3)]

    def fn():
        out = fapm.fapm_forward(pyr, store, cfg)
        return ops.add(ops.sum(ops.mul(out[0], out[0])), ops.sum(ops.mul(out[1], out[1])))

    return _check_store("fapm", fn, store, pyr, seed)


def check_refine(seed: int) -> GradcheckReport:
    rng = np.random.default_rng([seed, 4])
    cfg = FapmConfig(rank=4, in_dim=4, out_dims=[6], se_reduction=2)
    store = _randomize(fapm.init_fapm(cfg, seed), rng)
    z = _t(rng, 1, 4, 8, 8)
    sub = ParamStore()
    for n, t in store.subset("fapm.scale0.").items():
        if not any(k in n for k in (".sp.", ".gen.")):
            sub._params[n] = t

    def fn():
        out = fapm.refine(z, sub, "fapm.scale0.", cfg)
        return ops.sum(ops.mul(out, out))

    return _check_store("fapm_refine", fn, sub, [z], seed)


def check_decoder(seed: int) -> GradcheckReport:
    rng = np.random.default_rng([seed, 5])
    cfg = DecoderConfig(skip_dims=[3, 4], num_classes=3, final_upsample_factor=4)
    store = _randomize(decoder.init_decoder(cfg, seed), rng)
    skips = [_t(rng, 1, 3, 4, 4), _t(rng, 1, 4, 2, 2)]

    def fn():
        out = decoder.decoder_forward(skips, store, cfg)
        return ops.sum(ops.mul(out, out))

    return _check_store("decoder", fn, store, skips, seed)


def check_losses(seed: int) -> GradcheckReport:
    rng = np.random.default_rng([seed, 6])
    logits = _t(rng, 2, 3, 4, 4)
    target = rng.integers(0, 3, size=(2, 4, 4))
    return gradcheck(lambda z: losses.total_loss(z, target)[0], [logits], EPS, TOL, name="losses", seed=seed)


MODULES: dict[str, Callable[[int], GradcheckReport]] = {
    "adapter_stage": check_interaction_stage,
    "adapter": check_adapter,
    "fapm": check_fapm,
    "fapm_refine": check_refine,
    "decoder": check_decoder,
    "losses": check_losses,
}

ALL_NAMES = list(PRIMITIVES) + list(MODULES)


def run_suite(names: list[str] | None = None, seed: int = 0, instances: int = 3) -> list[GradcheckReport]:
    names = list(names) if names else ALL_NAMES
    unknown = [n for n in names if n not in PRIMITIVES and n not in MODULES]
    if unknown:
        raise KeyError(f"unknown gradcheck target(s): {', '.join(unknown)}")
    reports = []
    for name in names:
        for k in range(instances):
            s = seed * 1000 + k
            if name in PRIMITIVES:
                fn, inputs = PRIMITIVES[name](np.random.default_rng([s, 7]))
                reports.append(gradcheck(fn, inputs, EPS, TOL, name=f"{name}[{k}]", seed=s))
            else:
                rep = MODULES[name](s)
                rep.name = f"{name}[{k}]"
                reports.append(rep)
    return reports
