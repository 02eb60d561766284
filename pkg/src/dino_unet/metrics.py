"""Per-class Dice and HD95 with a tab-separated report."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

REPORT_COLUMNS = ("sample_id", "class", "dice", "hd95", "hd95_flag")

# hd95_flag values
OK = "ok"
SENTINEL = "sentinel"  # exactly one mask empty; hd95 is the image diagonal
EMPTY = "empty"  # both masks empty; excluded from means


def dice_metric(pred: np.ndarray, true: np.ndarray, cls: int) -> float:
    a = np.asarray(pred) == cls
    b = np.asarray(true) == cls
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one of their 8 neighbours outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask
    eroded = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)
    return mask & ~eroded


def _directed(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(dst).query(src, k=1)
    return np.asarray(d, dtype=np.float64)


def hd95_with_flag(pred: np.ndarray, true: np.ndarray, cls: int) -> tuple[float, str]:
    """95th-percentile symmetric Hausdorff distance between class boundaries.

    Returns (distance in pixels, flag). Percentiles interpolate linearly
    between order statistics.
    """
    pred = np.asarray(pred)
    a = np.argwhere(boundary(pred == cls)).astype(np.float64)
    b = np.argwhere(boundary(np.asarray(true) == cls)).astype(np.float64)
    if len(a) == 0 and len(b) == 0:
        return 0.0, EMPTY
    if len(a) == 0 or len(b) == 0:
        return float(np.hypot(*pred.shape[-2:])), SENTINEL
    ab = np.percentile(_directed(a, b), 95)
    ba = np.percentile(_directed(b, a), 95)
    return float(max(ab, ba)), OK


def hd95(pred: np.ndarray, true: np.ndarray, cls: int) -> float:
    return hd95_with_flag(pred, true, cls)[0]


@dataclass
class MetricRow:
    sample_id: str
    cls: int
    dice: float
    hd95: float
    hd95_flag: str


@dataclass
class MetricReport:
    """Per (sample, class) rows plus per-class and overall means.

    Means skip the background class 0 and any (sample, class) pair where
    both masks are empty.
    """

    num_classes: int
    rows: list[MetricRow] = field(default_factory=list)

    def _included(self, cls: int | None = None) -> list[MetricRow]:
        return [r for r in self.rows if r.cls != 0 and r.hd95_flag != EMPTY and (cls is None or r.cls == cls)]

    @property
    def per_class_dice(self) -> list[float]:
        return [_mean([r.dice for r in self._included(c)]) for c in range(1, self.num_classes)]

    @property
    def per_class_hd95(self) -> list[float]:
        return [_mean([r.hd95 for r in self._included(c)]) for c in range(1, self.num_classes)]

    @property
    def mean_dice(self) -> float:
        return _mean([r.dice for r in self._included()])

    @property
    def mean_hd95(self) -> float:
        return _mean([r.hd95 for r in self._included()])

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("# means exclude class 0 (background) and rows flagged 'empty'\n")
        buf.write("\t".join(REPORT_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(f"{r.sample_id}\t{r.cls}\t{r.dice:.6f}\t{r.hd95:.6f}\t{r.hd95_flag}\n")
        for c, (d, h) in enumerate(zip(self.per_class_dice, self.per_class_hd95), start=1):
            buf.write(f"mean\t{c}\t{d:.6f}\t{h:.6f}\t-\n")
        buf.write(f"mean\tall\t{self.mean_dice:.6f}\t{self.mean_hd95:.6f}\t-\n")
        return buf.getvalue()


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def evaluate_masks(preds, trues, num_classes: int, sample_ids=None) -> MetricReport:
    report = MetricReport(num_classes)
    for n, (p, t) in enumerate(zip(preds, trues)):
        sid = str(sample_ids[n]) if sample_ids is not None else str(n)
        for c in range(num_classes):
            h, flag = hd95_with_flag(p, t, c)
            report.rows.append(MetricRow(sid, c, dice_metric(p, t, c), h, flag))
    return report


def parse_report(text: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = tuple(lines[0].split("\t"))
    if header != REPORT_COLUMNS:
        raise ValueError(f"report header {header} != {REPORT_COLUMNS}")
    return [dict(zip(header, ln.split("\t"))) for ln in lines[1:]]
