"""Segmentation quality measures for binary masks.

Overlap measures come from the pixel confusion counts. Distance measures
(Hausdorff, ASSD) use Euclidean distances between boundary pixel sets.
Boundary Dice measures average a local Dice coefficient computed in the
von Neumann neighbourhood (pixel plus its four edge neighbours) of every
boundary pixel.

Conventions: a 0/0 ratio counts as perfect agreement (1.0); distance and
boundary measures on an empty boundary raise :class:`UndefinedMetricError`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int64)


class UndefinedMetricError(ValueError):
    """The metric has no value for these masks (e.g. an empty boundary)."""


def _pair(pred, gt):
    m = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if m.shape != g.shape:
        raise ValueError(f"mask shapes differ: {m.shape} vs {g.shape}")
    return m, g


def _ratio(num: float, den: float) -> float:
    return 1.0 if den == 0 else num / den


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt) -> Confusion:
    m, g = _pair(pred, gt)
    tp = int(np.count_nonzero(m & g))
    fp = int(np.count_nonzero(m & ~g))
    fn = int(np.count_nonzero(~m & g))
    return Confusion(tp, fp, fn, m.size - tp - fp - fn)


def overlap_metrics(c: Confusion) -> dict:
    return {
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "iou": _ratio(c.tp, c.tp + c.fp + c.fn),
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "recall": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
    }


def boundary_mask(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour that is background or off-image."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def boundary(mask) -> np.ndarray:
    """Boundary pixel coordinates as a K x 2 (row, col) array in row-major order."""
    return np.argwhere(boundary_mask(mask))


def _directed_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from every boundary pixel of ``src`` to the nearest one of ``dst``."""
    bs, bd = boundary_mask(src), boundary_mask(dst)
    if not bs.any() or not bd.any():
        raise UndefinedMetricError("distance metrics need non-empty boundaries on both masks")
    dist = ndimage.distance_transform_edt(~bd)
    return dist[bs]


def hausdorff(pred, gt) -> float:
    m, g = _pair(pred, gt)
    return float(max(_directed_distances(m, g).max(), _directed_distances(g, m).max()))


def assd(pred, gt) -> float:
    m, g = _pair(pred, gt)
    a, b = _directed_distances(m, g), _directed_distances(g, m)
    return float((a.sum() + b.sum()) / (a.size + b.size))


def rvd(pred, gt) -> float:
    """Absolute relative volume difference ||M| - |G|| / |G|."""
    m, g = _pair(pred, gt)
    vg = int(g.sum())
    if vg == 0:
        raise UndefinedMetricError("rvd is undefined for an empty ground truth")
    return abs(int(m.sum()) - vg) / vg


def _neighbourhood_counts(mask: np.ndarray) -> np.ndarray:
    return ndimage.correlate(mask.astype(np.int64), _CROSS, mode="constant", cval=0)


def local_dice_map(pred, gt) -> np.ndarray:
    """Dice of M and G restricted to each pixel's clipped von Neumann neighbourhood."""
    m, g = _pair(pred, gt)
    nm = _neighbourhood_counts(m)
    ng = _neighbourhood_counts(g)
    ni = _neighbourhood_counts(m & g)
    den = nm + ng
    out = np.ones(m.shape, dtype=np.float64)
    nz = den > 0
    out[nz] = 2.0 * ni[nz] / den[nz]
    return out


def local_dice(pred, gt, x) -> float:
    m, g = _pair(pred, gt)
    r, c = x
    if not (0 <= r < m.shape[0] and 0 <= c < m.shape[1]):
        raise IndexError(f"pixel {x} outside image {m.shape}")
    return float(local_dice_map(m, g)[r, c])


def dbd(source, other) -> float:
    """Directed boundary Dice: mean local Dice over the boundary of ``source``.

    ``dbd(G, M)`` is the measure relative to the ground truth, ``dbd(M, G)``
    relative to the machine segmentation.
    """
    a, b = _pair(source, other)
    ba = boundary_mask(a)
    if not ba.any():
        raise UndefinedMetricError("directed boundary Dice needs a non-empty boundary")
    return float(local_dice_map(a, b)[ba].mean())


def sbd(pred, gt) -> float:
    """Symmetric boundary Dice, weighted by the two boundary sizes."""
    m, g = _pair(pred, gt)
    bm, bg = boundary_mask(m), boundary_mask(g)
    if not bm.any() or not bg.any():
        raise UndefinedMetricError("symmetric boundary Dice needs non-empty boundaries")
    ld = local_dice_map(m, g)
    return float((ld[bg].sum() + ld[bm].sum()) / (bg.sum() + bm.sum()))


@dataclass
class MetricReport:
    dice: Optional[float]
    iou: Optional[float]
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    hd: Optional[float]
    assd: Optional[float]
    rvd: Optional[float]
    dbd_g: Optional[float]
    dbd_m: Optional[float]
    sbd: Optional[float]

    def to_dict(self, digits: int = 4) -> dict:
        return {k: (None if v is None else round(float(v), digits)) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _maybe(fn, *args) -> Optional[float]:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def evaluate(pred, gt) -> MetricReport:
    """All twelve measures for one mask pair; undefined ones are None."""
    m, g = _pair(pred, gt)
    ov = overlap_metrics(confusion(m, g))
    return MetricReport(
        **ov,
        hd=_maybe(hausdorff, m, g),
        assd=_maybe(assd, m, g),
        rvd=_maybe(rvd, m, g),
        dbd_g=_maybe(dbd, g, m),
        dbd_m=_maybe(dbd, m, g),
        sbd=_maybe(sbd, m, g),
    )


def mean_report(reports: Iterable[MetricReport]) -> MetricReport:
    """Per-field mean over samples, skipping samples where a field is undefined."""
    reports = list(reports)
    values = {}
    for f in fields(MetricReport):
        vals = [getattr(r, f.name) for r in reports if getattr(r, f.name) is not None]
        values[f.name] = math.fsum(vals) / len(vals) if vals else None
    return MetricReport(**values)
