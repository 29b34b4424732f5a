"""mIoU metrics, range-binned evaluation, and dataset statistics.

Scoring is binary: Moving cells vs everything else (Static ground truth
counts as not-moving). A class absent from both prediction and ground
truth contributes IoU 1 by default so empty far bins do not read as
failures; `absent_iou=None` skips such classes instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .bev_raster import BevGrid, MOVING_CELL
from .errors import EmptyEval, GridMismatch
from .ingest import CLASS_NAMES
from .motion_labeling import MOVING, MotionLabel


@dataclass
class ConfusionMatrix:
    """Binary moving/not-moving cell counts."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class RangeBins:
    """z-depth bin edges; default five 10 m bins over [0, 50]."""

    edges: tuple = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)

    def __post_init__(self):
        e = np.asarray(self.edges)
        if np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly increasing")


def _check_same_spec(pred: BevGrid, gt: BevGrid):
    if pred.spec != gt.spec or pred.cells.shape != gt.cells.shape:
        raise GridMismatch("prediction and ground truth grids differ")


def accumulate(pred: BevGrid, gt: BevGrid, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add per-cell binary confusion counts for one frame pair."""
    _check_same_spec(pred, gt)
    p = pred.cells == MOVING_CELL
    g = gt.cells == MOVING_CELL
    cm.tp += int(np.sum(p & g))
    cm.fp += int(np.sum(p & ~g))
    cm.fn += int(np.sum(~p & g))
    cm.tn += int(np.sum(~p & ~g))
    return cm


def _iou(inter: int, union: int, absent_iou):
    if union == 0:
        return absent_iou
    return inter / union


def miou(cm: ConfusionMatrix, absent_iou: float = 1.0,
         moving_only: bool = False) -> float:
    """Mean of moving and not-moving IoU (or moving IoU alone)."""
    if cm.total == 0:
        raise EmptyEval("no cells accumulated")
    iou_m = _iou(cm.tp, cm.tp + cm.fp + cm.fn, absent_iou)
    if moving_only:
        if iou_m is None:
            raise EmptyEval("moving class absent from both masks")
        return iou_m
    iou_n = _iou(cm.tn, cm.tn + cm.fp + cm.fn, absent_iou)
    ious = [v for v in (iou_m, iou_n) if v is not None]
    if not ious:
        raise EmptyEval("both classes absent")
    return float(np.mean(ious))


def bin_confusions(pred: BevGrid, gt: BevGrid,
                   bins: RangeBins = RangeBins()) -> List[ConfusionMatrix]:
    """One confusion matrix per depth bin, assigned by cell-center z.

    Bins are half-open [lo, hi); the last bin is closed.
    """
    _check_same_spec(pred, gt)
    zs = pred.spec.cell_centers_z()
    edges = bins.edges
    lo, hi = pred.spec.z_range
    if edges[0] != lo or edges[-1] != hi:
        raise GridMismatch("bin edges do not cover the grid z range")
    out = []
    for i in range(len(edges) - 1):
        last = i == len(edges) - 2
        rows = (zs >= edges[i]) & ((zs <= edges[i + 1]) if last else (zs < edges[i + 1]))
        sub_pred = BevGrid(pred.spec, pred.cells[rows])
        sub_gt = BevGrid(gt.spec, gt.cells[rows])
        cm = ConfusionMatrix()
        p = sub_pred.cells == MOVING_CELL
        g = sub_gt.cells == MOVING_CELL
        cm.tp = int(np.sum(p & g))
        cm.fp = int(np.sum(p & ~g))
        cm.fn = int(np.sum(~p & g))
        cm.tn = int(np.sum(~p & ~g))
        out.append(cm)
    return out


def range_binned_miou(pred: BevGrid, gt: BevGrid,
                      bins: RangeBins = RangeBins(),
                      absent_iou: float = 1.0,
                      moving_only: bool = False) -> List[float]:
    """Per-bin mIoU over five 10 m depth bins (Fig/ablation protocol)."""
    return [miou(cm, absent_iou=absent_iou, moving_only=moving_only)
            for cm in bin_confusions(pred, gt, bins)]


def dataset_stats(labels: Sequence[MotionLabel]) -> Dict[str, Dict[str, int]]:
    """Per-class static/moving/total counts over (object, frame) instances."""
    stats = {c: {"static": 0, "moving": 0, "total": 0} for c in CLASS_NAMES}
    for l in labels:
        row = stats[l.class_name]
        row["moving" if l.verdict == MOVING else "static"] += 1
        row["total"] += 1
    return stats
