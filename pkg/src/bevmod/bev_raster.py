"""BEV ground-truth rasterization and rendering.

Labeled 3D boxes (camera rectified frame) are projected onto the xz
plane and painted into a class grid: 0 background, 1 static, 2 moving.
Rendering follows the red-moving / blue-static convention with a green
ego marker at the bottom center.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .geometry import box_corners
from .motion_labeling import MOVING

BACKGROUND, STATIC_CELL, MOVING_CELL = 0, 1, 2

# palette for render_png: class -> RGB
_PALETTE = {BACKGROUND: (0, 0, 0), STATIC_CELL: (0, 0, 255), MOVING_CELL: (255, 0, 0)}
_EGO_COLOR = (0, 255, 0)


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry over the camera xz plane.

    Row 0 is the farthest z; the ego vehicle sits at the bottom center.
    """

    z_range: Tuple[float, float] = (0.0, 50.0)   # meters forward
    x_range: Tuple[float, float] = (-25.0, 25.0)  # meters lateral
    resolution: float = 0.2                       # meters per pixel

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        for lo, hi in (self.z_range, self.x_range):
            n = (hi - lo) / self.resolution
            if abs(n - round(n)) > 1e-9:
                raise ValueError("range extent must be an integer number of cells")

    @property
    def height(self) -> int:
        return round((self.z_range[1] - self.z_range[0]) / self.resolution)

    @property
    def width(self) -> int:
        return round((self.x_range[1] - self.x_range[0]) / self.resolution)

    def cell_centers_x(self) -> np.ndarray:
        """x coordinate of each column's cell center."""
        return self.x_range[0] + (np.arange(self.width) + 0.5) * self.resolution

    def cell_centers_z(self) -> np.ndarray:
        """z coordinate of each row's cell center (row 0 farthest)."""
        return self.z_range[1] - (np.arange(self.height) + 0.5) * self.resolution


@dataclass
class BevGrid:
    spec: GridSpec
    cells: np.ndarray  # (height, width) uint8 in {0, 1, 2}

    @staticmethod
    def empty(spec: GridSpec) -> "BevGrid":
        return BevGrid(spec, np.zeros((spec.height, spec.width), dtype=np.uint8))


def footprint(box) -> np.ndarray:
    """Ground-plane (x, z) quad of a camera-frame box, counter-clockwise."""
    corners = box_corners(box)[:4]  # bottom face
    quad = corners[:, [0, 2]]
    # enforce counter-clockwise orientation (positive signed area)
    area2 = 0.0
    for i in range(4):
        x0, z0 = quad[i]
        x1, z1 = quad[(i + 1) % 4]
        area2 += x0 * z1 - x1 * z0
    if area2 < 0:
        quad = quad[::-1]
    return quad


def _paint(mask: np.ndarray, poly: np.ndarray, spec: GridSpec) -> None:
    """Set mask cells whose centers lie inside or on the convex polygon."""
    xs = spec.cell_centers_x()
    zs = spec.cell_centers_z()
    # restrict to the polygon's bounding box
    j0 = np.searchsorted(xs, poly[:, 0].min())
    j1 = np.searchsorted(xs, poly[:, 0].max(), side="right")
    z_lo, z_hi = poly[:, 1].min(), poly[:, 1].max()
    rows = np.nonzero((zs >= z_lo) & (zs <= z_hi))[0]
    if j1 <= j0 or rows.size == 0:
        return
    i0, i1 = rows.min(), rows.max() + 1
    xg, zg = np.meshgrid(xs[j0:j1], zs[i0:i1])
    inside = np.ones(xg.shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        x0, z0 = poly[k]
        x1, z1 = poly[(k + 1) % n]
        # CCW polygon: interior is where the cross product is >= 0
        inside &= (x1 - x0) * (zg - z0) - (z1 - z0) * (xg - x0) >= 0
    mask[i0:i1, j0:j1] |= inside


def rasterize(footprints: Sequence[Tuple[np.ndarray, str]], spec: GridSpec) -> BevGrid:
    """Rasterize (polygon, verdict) pairs; Moving paints over Static."""
    static_mask = np.zeros((spec.height, spec.width), dtype=bool)
    moving_mask = np.zeros((spec.height, spec.width), dtype=bool)
    for poly, verdict in footprints:
        target = moving_mask if verdict == MOVING else static_mask
        _paint(target, np.asarray(poly, dtype=float), spec)
    cells = np.zeros((spec.height, spec.width), dtype=np.uint8)
    cells[static_mask] = STATIC_CELL
    cells[moving_mask] = MOVING_CELL
    return BevGrid(spec, cells)


def render_png(grid: BevGrid, ego_marker: bool = True) -> bytes:
    """Render a grid to PNG bytes: moving red, static blue, background black."""
    h, w = grid.cells.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for cls, color in _PALETTE.items():
        rgb[grid.cells == cls] = color
    img = Image.fromarray(rgb)
    if ego_marker:
        r = max(2, min(h, w) // 60)
        cx, cy = w // 2, h - 1
        ImageDraw.Draw(img).ellipse([cx - r, cy - r, cx + r, cy + r], fill=_EGO_COLOR)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes, spec: GridSpec) -> BevGrid:
    """Recover the class grid from a rendered PNG (ego marker reads as background)."""
    rgb = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
    cells = np.zeros(rgb.shape[:2], dtype=np.uint8)
    for cls, color in _PALETTE.items():
        if cls == BACKGROUND:
            continue
        cells[np.all(rgb == color, axis=-1)] = cls
    return BevGrid(spec, cells)


def write_mask(grid: BevGrid) -> bytes:
    """Serialize to the flat binary mask layout (header + one byte per cell)."""
    header = f"BEVGRID v1 {grid.spec.height} {grid.spec.width} {grid.spec.resolution}\n"
    return header.encode("ascii") + grid.cells.tobytes()


def read_mask(data: bytes, spec: GridSpec = None) -> BevGrid:
    """Inverse of write_mask."""
    newline = data.index(b"\n")
    parts = data[:newline].decode("ascii").split()
    if parts[:2] != ["BEVGRID", "v1"]:
        raise ValueError("not a BEVGRID v1 mask")
    height, width, resolution = int(parts[2]), int(parts[3]), float(parts[4])
    if spec is None:
        extent_z = height * resolution
        extent_x = width * resolution
        spec = GridSpec(z_range=(0.0, extent_z),
                        x_range=(-extent_x / 2.0, extent_x / 2.0),
                        resolution=resolution)
    cells = np.frombuffer(data[newline + 1:], dtype=np.uint8).reshape(height, width).copy()
    if not np.all(cells <= MOVING_CELL):
        raise ValueError("mask contains out-of-range class values")
    return BevGrid(spec, cells)


def boxes_to_grid(cam_boxes, verdicts, spec: GridSpec) -> BevGrid:
    """Convenience: footprint + rasterize for labeled camera-frame boxes."""
    polys: List[Tuple[np.ndarray, str]] = []
    for box, verdict in zip(cam_boxes, verdicts):
        polys.append((footprint(box), verdict))
    return rasterize(polys, spec)
