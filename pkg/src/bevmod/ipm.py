"""Flat-ground re-projection baseline.

A homography between the image plane and the BEV ground plane is
estimated from exactly four point pairs (direct linear transform with
Hartley-style coordinate scaling for conditioning) and used to warp
front-view class masks onto the BEV grid by inverse nearest-neighbor
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .bev_raster import BACKGROUND, BevGrid, GridSpec
from .errors import DegeneratePoints, HorizonPoint


@dataclass(frozen=True)
class Correspondence:
    src: Tuple[float, float]  # (u, v) pixels, image plane
    dst: Tuple[float, float]  # (x, z) meters, BEV plane

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (*self.src, *self.dst)):
            raise ValueError("correspondence coordinates must be finite")


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, canonically normalized.

    Normalization: unit Frobenius norm with the first nonzero entry
    positive, so equal homographies compare bitwise.
    """

    h: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.h, dtype=float).reshape(3, 3)
        m = m / np.linalg.norm(m)
        flat = m.ravel()
        first = flat[np.nonzero(flat)[0][0]]
        if first < 0:
            m = -m
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is rank-deficient")
        object.__setattr__(self, "h", m)


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity transform moving points to centroid 0, mean distance sqrt(2)."""
    mean = pts.mean(axis=0)
    dist = np.linalg.norm(pts - mean, axis=1).mean()
    s = np.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array([[s, 0, -s * mean[0]],
                     [0, s, -s * mean[1]],
                     [0, 0, 1.0]])


def estimate_homography(pairs: Sequence[Correspondence]) -> Homography:
    """Four-point DLT: exact null-space solve of the 8x9 constraint matrix."""
    if len(pairs) != 4:
        raise ValueError(f"need exactly 4 correspondences, got {len(pairs)}")
    src = np.array([p.src for p in pairs], dtype=float)
    dst = np.array([p.dst for p in pairs], dtype=float)
    # no 3 source (or destination) points may be collinear
    for pts in (src, dst):
        for drop in range(4):
            tri = np.delete(pts, drop, axis=0)
            e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
            area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
            if area <= 1e-9:
                raise DegeneratePoints("three of the four points are collinear")
    ts, td = _normalizer(src), _normalizer(dst)
    sh = np.column_stack([src, np.ones(4)]) @ ts.T
    dh = np.column_stack([dst, np.ones(4)]) @ td.T
    rows = []
    for (x, y, w), (xp, yp, wp) in zip(sh, dh):
        rows.append([0, 0, 0, -wp * x, -wp * y, -wp * w, yp * x, yp * y, yp * w])
        rows.append([wp * x, wp * y, wp * w, 0, 0, 0, -xp * x, -xp * y, -xp * w])
    a = np.asarray(rows)
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(td) @ hn @ ts)


def apply_homography(hom: Homography, p: Tuple[float, float]) -> Tuple[float, float]:
    """Map one point, with perspective division."""
    v = hom.h @ np.array([p[0], p[1], 1.0])
    if abs(v[2]) < 1e-12:
        raise HorizonPoint(f"point {p} maps to the line at infinity")
    return (v[0] / v[2], v[1] / v[2])


def warp_mask(front_mask: np.ndarray, hom: Homography, spec: GridSpec) -> BevGrid:
    """Inverse-warp a front-view class mask onto the BEV grid.

    Each BEV cell center is mapped back through the inverted homography
    and sampled nearest-neighbor; out-of-image or horizon cells become
    background.
    """
    hinv = np.linalg.inv(hom.h)
    xs = spec.cell_centers_x()
    zs = spec.cell_centers_z()
    xg, zg = np.meshgrid(xs, zs)
    pts = np.stack([xg.ravel(), zg.ravel(), np.ones(xg.size)])
    mapped = hinv @ pts
    w = mapped[2]
    ok = np.abs(w) >= 1e-12
    u = np.zeros_like(w)
    v = np.zeros_like(w)
    u[ok] = mapped[0, ok] / w[ok]
    v[ok] = mapped[1, ok] / w[ok]
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    h, wid = front_mask.shape
    ok &= (ui >= 0) & (ui < wid) & (vi >= 0) & (vi < h)
    cells = np.full(xg.size, BACKGROUND, dtype=np.uint8)
    cells[ok] = front_mask[vi[ok], ui[ok]]
    return BevGrid(spec, cells.reshape(spec.height, spec.width))


def ipm_baseline(front_mask: np.ndarray, hom: Homography, spec: GridSpec,
                 gt: BevGrid):
    """Warp a front-view prediction and score it against BEV ground truth."""
    from .evaluate import ConfusionMatrix, accumulate, miou

    warped = warp_mask(front_mask, hom, spec)
    cm = accumulate(warped, gt, ConfusionMatrix())
    return warped, miou(cm)
