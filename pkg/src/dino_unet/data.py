"""Seeded synthetic segmentation samples (rectangles and discs on noise)."""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .container import Entry

NOISE_SIGMA = 0.1
MAX_PLACEMENT_TRIES = 50


@dataclass
class SegSample:
    image: np.ndarray  # [3, H, W] float32
    mask: np.ndarray  # [H, W] int32
    sample_id: str = ""


def class_color(cls: int, num_classes: int) -> np.ndarray:
    """Distinct RGB intensity signature per foreground class."""
    h = (cls - 1) / max(num_classes - 1, 1)
    return np.array(colorsys.hsv_to_rgb(h, 0.8, 1.0))


def shape_size_bounds(size: int) -> dict[str, tuple[int, int]]:
    """Inclusive integer ranges for rectangle sides and disc radii."""
    return {"rect_side": (size // 6, size // 3), "disc_radius": (size // 12, size // 6)}


def _draw_shape(rng: np.random.Generator, size: int) -> np.ndarray:
    b = shape_size_bounds(size)
    yy, xx = np.mgrid[:size, :size]
    if rng.random() < 0.5:
        hgt = rng.integers(b["rect_side"][0], b["rect_side"][1] + 1)
        wid = rng.integers(b["rect_side"][0], b["rect_side"][1] + 1)
        y0 = rng.integers(0, size - hgt + 1)
        x0 = rng.integers(0, size - wid + 1)
        return (yy >= y0) & (yy < y0 + hgt) & (xx >= x0) & (xx < x0 + wid)
    r = rng.integers(b["disc_radius"][0], b["disc_radius"][1] + 1)
    cy = rng.integers(r, size - r)
    cx = rng.integers(r, size - r)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def make_sample(rng: np.random.Generator, size: int, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    n_fg = num_classes - 1
    k = int(rng.integers(1, min(3, n_fg) + 1))
    labels = rng.choice(np.arange(1, num_classes), size=k, replace=False)
    mask = np.zeros((size, size), np.int32)
    occupied = np.zeros((size, size), bool)
    for lab in labels:
        for _ in range(MAX_PLACEMENT_TRIES):
            shape = _draw_shape(rng, size)
            # keep a one-pixel gap so shapes never touch
            grown = np.zeros_like(shape)
            grown[:-1] |= shape[1:]
            grown[1:] |= shape[:-1]
            grown[:, :-1] |= shape[:, 1:]
            grown[:, 1:] |= shape[:, :-1]
            if not (occupied & (shape | grown)).any():
                mask[shape] = lab
                occupied |= shape
                break
    image = np.zeros((3, size, size))
    for lab in labels:
        image[:, mask == lab] = class_color(int(lab), num_classes)[:, None]
    image += rng.standard_normal(image.shape) * NOISE_SIGMA
    return image.astype(np.float32), mask


def make_synth_dataset(n: int, image_size: int, num_classes: int, seed: int) -> list[SegSample]:
    if image_size % 32:
        raise ValueError(f"image_size={image_size} must be a multiple of 32")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img, mask = make_sample(rng, image_size, num_classes)
        out.append(SegSample(img, mask, f"sample_{i:04d}"))
    return out


def save_dataset(samples: list[SegSample], out_dir, meta: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for s in samples:
        name = f"{s.sample_id}.dunt"
        container.save(out / name, [Entry("image", s.image.astype("<f4")), Entry("mask", s.mask.astype("<i4"))])
        names.append(name)
    manifest = {"files": names, **(meta or {})}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_dataset(data_dir) -> list[SegSample]:
    d = Path(data_dir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    samples = []
    for name in manifest["files"]:
        entries = {e.name: e.array for e in container.load(d / name)}
        samples.append(SegSample(entries["image"], entries["mask"], Path(name).stem))
    if not samples:
        raise ValueError(f"no samples listed in {d / 'manifest.json'}")
    return samples
