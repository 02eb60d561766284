"""Straight-line reference implementations used to pin the vectorized code.

Nothing here imports the package's ops; every oracle is a plain loop or an
einsum so that agreement is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loop(x, w, b=None, stride=1, padding=0, groups=1):
    bsz, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.zeros((bsz, cin, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    out = np.zeros((bsz, cout, ho, wo))
    opg = cout // groups
    for n in range(bsz):
        for co in range(cout):
            g = co // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cpg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[co, ci, u, v] * xp[n, g * cpg + ci, i * stride + u, j * stride + v]
                    out[n, co, i, j] = acc
    return out


def interp_1d_weights(o, n_in, n_out):
    """Half-pixel source position of output index ``o``, clamped at the low edge."""
    src = (o + 0.5) * n_in / n_out - 0.5
    src = min(max(src, 0.0), n_in - 1)
    i0 = int(math.floor(src))
    i1 = min(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_pixel(img, out_h, out_w):
    """Per-pixel bilinear resize of one [H, W] plane."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        y0, y1, fy = interp_1d_weights(i, h, out_h)
        for j in range(out_w):
            x0, x1, fx = interp_1d_weights(j, w, out_w)
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def sample_point(img, x, y):
    """Scalar bilinear read of an [H, W] plane at normalized (x, y), border-clamped."""
    h, w = img.shape
    px = min(max(x * w - 0.5, 0.0), w - 1)
    py = min(max(y * h - 0.5, 0.0), h - 1)
    x0, y0 = int(math.floor(px)), int(math.floor(py))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = px - x0, py - y0
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
            + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


def deformable_attn_loop(query, value, p, num_heads, num_points):
    """Per-query, per-head, per-point evaluation with explicit loops.

    ``p`` maps short names (value_w, value_b, off_w, off_b, attn_w, attn_b,
    out_w, out_b) to numpy arrays.
    """
    bsz, d, hq, wq = query.shape
    _, _, hv, wv = value.shape
    dh = d // num_heads
    v = np.einsum("oc,bchw->bohw", p["value_w"], value) + p["value_b"][None, :, None, None]
    mixed = np.zeros((bsz, d, hq, wq))
    for n in range(bsz):
        for i in range(hq):
            for j in range(wq):
                q = query[n, :, i, j]
                off = p["off_w"] @ q + p["off_b"]
                logit = p["attn_w"] @ q + p["attn_b"]
                rx, ry = (j + 0.5) / wq, (i + 0.5) / hq
                for hd in range(num_heads):
                    lg = logit[hd * num_points:(hd + 1) * num_points]
                    a = np.exp(lg - lg.max())
                    a /= a.sum()
                    for k in range(num_points):
                        base = 2 * (hd * num_points + k)
                        sx = rx + off[base] / max(hv, wv)
                        sy = ry + off[base + 1] / max(hv, wv)
                        for c in range(dh):
                            ch = hd * dh + c
                            mixed[n, ch, i, j] += a[k] * sample_point(v[n, ch], sx, sy)
    return np.einsum("oc,bchw->bohw", p["out_w"], mixed) + p["out_b"][None, :, None, None]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def fapm_straight(pyramid, w):
    """Straight-line decompose -> FiLM -> refine -> SE -> residual over plain dicts.

    ``w`` holds one dict per scale with its own copy of the shared context
    weights, so no parameter-sharing machinery is involved.
    """
    outs = []
    for c, s in zip(pyramid, w):
        z_ctx = np.einsum("rd,bdhw->brhw", s["ctx_w"], c) + s["ctx_b"][None, :, None, None]
        z_sp = np.einsum("rd,bdhw->brhw", s["sp_w"], c) + s["sp_b"][None, :, None, None]
        gb = np.einsum("or,brhw->bohw", s["gen_w"], z_ctx) + s["gen_b"][None, :, None, None]
        r = z_sp.shape[1]
        z_mod = gb[:, :r] * z_sp + gb[:, r:]
        y = np.einsum("or,brhw->bohw", s["reduce_w"], z_mod) + s["reduce_b"][None, :, None, None]
        k = s["dw_w"].shape[-1]
        pad = k // 2
        yp = np.pad(y, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        dw = np.zeros_like(y)
        hh, ww = y.shape[2:]
        for u in range(k):
            for v in range(k):
                dw += s["dw_w"][None, :, 0, u, v, None, None] * yp[:, :, u:u + hh, v:v + ww]
        dw += s["dw_b"][None, :, None, None]
        y2 = np.einsum("oc,bchw->bohw", s["pw_w"], dw) + s["pw_b"][None, :, None, None]
        gap = y2.mean(axis=(2, 3))
        hid = np.maximum(gap @ s["fc1_w"].T + s["fc1_b"], 0.0)
        gate = _sigmoid(hid @ s["fc2_w"].T + s["fc2_b"])
        if "short_w" in s:
            short = np.einsum("or,brhw->bohw", s["short_w"], z_mod) + s["short_b"][None, :, None, None]
        else:
            short = z_mod
        outs.append(y2 * gate[:, :, None, None] + short)
    return outs


def boundary_loop(mask):
    """Foreground pixels with any 8-neighbour (or the image edge) outside."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < h and 0 <= jj < w) or not mask[ii, jj]:
                        out[i, j] = True
    return out


def hd95_all_pairs(pred, true, cls):
    """Exhaustive O(|A||B|) HD95 with the same empty-set conventions."""
    a = np.argwhere(boundary_loop(pred == cls)).astype(np.float64)
    b = np.argwhere(boundary_loop(true == cls)).astype(np.float64)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return float(np.hypot(*pred.shape))
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(max(np.percentile(d.min(axis=1), 95), np.percentile(d.min(axis=0), 95)))


def hausdorff_all_pairs(pred, true, cls):
    a = np.argwhere(boundary_loop(pred == cls)).astype(np.float64)
    b = np.argwhere(boundary_loop(true == cls)).astype(np.float64)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def sliding_window_materialized(forward, image, window, overlap, sigma_frac=1 / 8):
    """Materialize every tile and its Gaussian weight, then blend."""
    _, _, h, w = image.shape
    step = int(window * (1 - overlap))

    def starts(size):
        s = list(range(0, size - window + 1, step))
        return s if s[-1] == size - window else s + [size - window]

    sig = window * sigma_frac
    ax = np.arange(window) - (window - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sig * sig))
    gw = np.outer(g, g) / np.outer(g, g).max()
    tiles = [(y, x, forward(image[:, :, y:y + window, x:x + window])) for y in starts(h) for x in starts(w)]
    num = np.zeros(tiles[0][2].shape[:2] + (h, w))
    den = np.zeros((h, w))
    for y, x, t in tiles:
        num[:, :, y:y + window, x:x + window] += t * gw
        den[y:y + window, x:x + window] += gw
    return num / den


def rel_err(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)
