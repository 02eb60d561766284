"""Differentiable primitives used by the segmentation network.

Shapes must match exactly except for Python/0-d scalars and the explicit
bias helpers; anything else is rejected so shape bugs surface at the call.
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .autodiff import Tensor, make_result

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _scalar_value(x) -> float | None:
    if isinstance(x, Tensor):
        return None
    arr = np.asarray(x)
    if arr.ndim != 0:
        raise ValueError(f"only scalar constants broadcast; got array of shape {arr.shape}")
    return float(arr)


# --------------------------------------------------------------------------- elementwise

def add(a: Tensor, b) -> Tensor:
    c = _scalar_value(b)
    if c is not None:
        return make_result(a.data + a.dtype.type(c), [a], "add_scalar", lambda g: (g,))
    _check_same_shape("add", a, b)
    return make_result(a.data + b.data, [a, b], "add", lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    c = _scalar_value(b)
    if c is not None:
        return make_result(a.data - a.dtype.type(c), [a], "sub_scalar", lambda g: (g,))
    _check_same_shape("sub", a, b)
    return make_result(a.data - b.data, [a, b], "sub", lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, [a], "neg", lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    c = _scalar_value(b)
    if c is not None:
        c = a.dtype.type(c)
        return make_result(a.data * c, [a], "mul_scalar", lambda g: (g * c,))
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, [a, b], "mul", lambda g: (g * bd, g * ad))


def div(a: Tensor, b) -> Tensor:
    c = _scalar_value(b)
    if c is not None:
        c = a.dtype.type(c)
        return make_result(a.data / c, [a], "div_scalar", lambda g: (g / c,))
    _check_same_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, [a, b], "div", lambda g: (g / bd, -g * out / bd))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, [a], "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), [a], "log", lambda g: (g / ad,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, [a], "sigmoid", lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), [a], "relu", lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = (x * cdf).astype(a.dtype)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(a.dtype),)

    return make_result(out, [a], "gelu", bw)


# --------------------------------------------------------------------------- shape

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), [a], "reshape", lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), [a], "transpose",
                       lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ValueError(f"concat: shape mismatch {ref.shape} vs {t.shape} off axis {ax}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))]

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, "concat", bw)


def split(a: Tensor, sections: Sequence[int], axis: int) -> list[Tensor]:
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    ax = axis % a.ndim
    if builtins.sum(sections) != a.shape[ax]:
        raise ValueError(f"split: sections {list(sections)} do not sum to dim {a.shape[ax]}")
    outs = []
    start = 0
    for n in sections:
        outs.append(slice_axis(a, ax, start, start + n))
        start += n
    return outs


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return make_result(np.ascontiguousarray(a.data[idx]), [a], "slice", bw)


# --------------------------------------------------------------------------- reductions

def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    out = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_result(np.asarray(out, dtype=a.dtype), [a], "sum", bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis), 1.0 / n)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] spatial mean."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, [a], "softmax", bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, [a], "log_softmax", bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: affine params must be ({d},), got {gain.shape}, {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=red)
        dbias = g.sum(axis=red)
        gh = g * gain.data
        dx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return make_result(out, [x, gain, bias], "layer_norm", bw)


# --------------------------------------------------------------------------- linear algebra

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ w.T + b`` with ``w`` of shape [Dout, Din]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input last dim {x.shape[-1]} does not match weight Din {w.shape[1:]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[1])
    out = x2 @ w.data.T
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (w.shape[0],))
    inputs = [x, w] + ([b] if b is not None else [])

    def bw(g):
        g2 = g.reshape(-1, w.shape[0])
        grads = [(g2 @ w.data).reshape(x.shape), g2.T @ x2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_result(out, inputs, "linear", bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; leading dims must match."""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return make_result(ad @ bd, [a, b], "matmul", bw)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add ``b`` broadcast over leading axes.

    ``b`` either matches the trailing dims of ``x`` or is a per-channel
    vector for a [B,C,...] tensor.
    """
    if b.ndim == 1 and x.ndim >= 2 and b.shape[0] == x.shape[1] and x.shape[-1:] != b.shape:
        view = (1, b.shape[0]) + (1,) * (x.ndim - 2)
        red = tuple(i for i in range(x.ndim) if i != 1)
        return make_result(x.data + b.data.reshape(view), [x, b], "bias_add",
                           lambda g: (g, g.sum(axis=red)))
    if x.shape[x.ndim - b.ndim:] != b.shape:
        raise ValueError(f"bias_add: bias shape {b.shape} does not match trailing dims of {x.shape}")
    red = tuple(range(x.ndim - b.ndim))
    return make_result(x.data + b.data, [x, b], "bias_add", lambda g: (g, g.sum(axis=red)))


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale each channel map of [B,C,H,W] by the matching entry of [B,C]."""
    if x.ndim != 4 or s.shape != x.shape[:2]:
        raise ValueError(f"channel_scale: expected s of shape {x.shape[:2]}, got {s.shape}")
    xd, sd = x.data, s.data
    s4 = sd[:, :, None, None]
    return make_result(xd * s4, [x, s], "channel_scale",
                       lambda g: (g * s4, (g * xd).sum(axis=(2, 3))))


def weighted_sum(values: Tensor, weights: Tensor) -> Tensor:
    """Contract the last axis: [B,C,Q,K] x [B,Q,K] -> [B,C,Q]."""
    if values.ndim != 4 or weights.shape != (values.shape[0],) + values.shape[2:]:
        raise ValueError(f"weighted_sum: weights {weights.shape} incompatible with values {values.shape}")
    vd, wd = values.data, weights.data
    out = np.einsum("bcqk,bqk->bcq", vd, wd)

    def bw(g):
        return g[..., None] * wd[:, None], np.einsum("bcq,bcqk->bqk", g, vd)

    return make_result(out, [values, weights], "weighted_sum", bw)


# --------------------------------------------------------------------------- convolution

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: input of shape [B, Cin, H, W].
        w: kernel of shape [Cout, Cin/groups, kh, kw].
        b: optional bias of shape [Cout].
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be [B,Cin,H,W], got {x.shape}")
    if w.ndim != 4:
        raise ValueError(f"conv2d: weight must be [Cout,Cin/g,kh,kw], got {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups:
        raise ValueError(f"conv2d: Cin={cin} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ValueError(f"conv2d: weight Cin/g dim is {cin_g}, expected Cin/groups={cin // groups}")
    if cout % groups:
        raise ValueError(f"conv2d: Cout={cout} not divisible by groups={groups}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: output size ({ho},{wo}) < 1 for input H={h}, W={wd}")

    cout_g = cout // groups
    xd = x.data
    if kh == 1 and kw == 1 and padding == 0:
        xs = xd[:, :, ::stride, ::stride]
        cols = xs.transpose(0, 2, 3, 1).reshape(bsz * ho * wo, groups, cin_g)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        # [B,C,Ho,Wo,kh,kw] -> [B*Ho*Wo, g, Cin/g*kh*kw]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, groups, cin_g * kh * kw)
    wmat = w.data.reshape(groups, cout_g, cin_g * kh * kw)
    # [g, N, K] @ [g, K, Cout/g] -> [g, N, Cout/g]
    cols_g = np.ascontiguousarray(cols.transpose(1, 0, 2))
    out_g = cols_g @ wmat.transpose(0, 2, 1)
    out = out_g.transpose(1, 0, 2).reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    inputs = [x, w] + ([b] if b is not None else [])

    def bw(g):
        g_g = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, groups, cout_g).transpose(1, 0, 2)
        dw = (g_g.transpose(0, 2, 1) @ cols_g).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g_g @ wmat).transpose(1, 0, 2)  # [N, g, K]
            if kh == 1 and kw == 1 and padding == 0:
                dxs = dcols.reshape(bsz, ho, wo, cin).transpose(0, 3, 1, 2)
                if stride == 1:
                    dx = np.ascontiguousarray(dxs)
                else:
                    dx = np.zeros_like(xd)
                    dx[:, :, ::stride, ::stride] = dxs
            else:
                dcols = dcols.reshape(bsz, ho, wo, cin, kh, kw)
                hp, wp = h + 2 * padding, wd + 2 * padding
                dxp = np.zeros((bsz, cin, hp, wp), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                            dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                dx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, inputs, "conv2d", bw)


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise convolution with a matrix weight [Cout, Cin]."""
    if w.ndim != 2:
        raise ValueError(f"conv1x1: weight must be [Cout,Cin], got {w.shape}")
    return conv2d(x, reshape(w, w.shape + (1, 1)), b)


# --------------------------------------------------------------------------- resampling

def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic interpolation matrix, half-pixel (align_corners=False)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"bilinear_resize expects [B,C,H,W], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size ({out_h},{out_w}) must be >= 1")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return make_result(x.data.copy(), [x], "bilinear_resize", lambda g: (g,))
    ry = _resize_matrix(h, out_h, x.dtype)
    rx = _resize_matrix(w, out_w, x.dtype)
    out = np.ascontiguousarray(ry @ x.data @ rx.T)
    return make_result(out, [x], "bilinear_resize", lambda g: (ry.T @ g @ rx,))


def bilinear_sample(value: Tensor, points: Tensor) -> Tensor:
    """Sample ``value`` [B,C,H,W] at normalized ``points`` [B,P,2] -> [B,C,P].

    Points are (x, y) in [0, 1] with pixel centers at ``(j + 0.5) / W`` and
    ``(i + 0.5) / H``. Locations outside the pixel-center hull are clamped to
    the border; the gradient w.r.t. a clamped coordinate is zero.
    """
    if value.ndim != 4 or points.ndim != 3 or points.shape[-1] != 2 or points.shape[0] != value.shape[0]:
        raise ValueError(f"bilinear_sample: bad shapes value={value.shape} points={points.shape}")
    bsz, c, h, w = value.shape
    vd = value.data
    pd = points.data
    if not np.all(np.isfinite(pd)):
        raise FloatingPointError("bilinear_sample: non-finite sampling points")
    px = pd[..., 0] * w - 0.5
    py = pd[..., 1] * h - 0.5
    cx = np.clip(px, 0.0, w - 1)
    cy = np.clip(py, 0.0, h - 1)
    inside_x = (px >= 0) & (px <= w - 1)
    inside_y = (py >= 0) & (py <= h - 1)
    x0 = np.minimum(np.floor(cx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(cy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0).astype(vd.dtype)
    fy = (cy - y0).astype(vd.dtype)
    bidx = np.arange(bsz)[:, None]
    # gathered corners: [B,P,C]
    vflat = vd.transpose(0, 2, 3, 1)
    v00 = vflat[bidx, y0, x0]
    v01 = vflat[bidx, y0, x1]
    v10 = vflat[bidx, y1, x0]
    v11 = vflat[bidx, y1, x1]
    w00 = ((1 - fx) * (1 - fy))[..., None]
    w01 = (fx * (1 - fy))[..., None]
    w10 = ((1 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    out = (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11).transpose(0, 2, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gp = g.transpose(0, 2, 1)  # [B,P,C]
        dvalue = None
        if value.requires_grad:
            dflat = np.zeros((bsz, h, w, c), dtype=vd.dtype)
            bb = np.broadcast_to(bidx, y0.shape)
            for yy, xx, ww in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                np.add.at(dflat, (bb, yy, xx), gp * ww)
            dvalue = dflat.transpose(0, 3, 1, 2)
        dpoints = None
        if points.requires_grad:
            dfx = ((1 - fy)[..., None] * (v01 - v00) + fy[..., None] * (v11 - v10))
            dfy = ((1 - fx)[..., None] * (v10 - v00) + fx[..., None] * (v11 - v01))
            gx = (gp * dfx).sum(axis=-1) * w * inside_x
            gy = (gp * dfy).sum(axis=-1) * h * inside_y
            dpoints = np.stack([gx, gy], axis=-1).astype(pd.dtype)
        return dvalue, dpoints

    return make_result(out, [value, points], "bilinear_sample", bw)
