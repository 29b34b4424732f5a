"""SE(3) algebra, GPS-to-metric conversion, and the sensor frame chain.

Frames used throughout the pipeline: world <- imu <- velo <- cam.
All angles are radians internally; degrees appear only at the GPS boundary.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadRotation, PoleSingularity

EARTH_RADIUS = 6378137.0  # meters

# Drift below this is silently projected back onto SO(3); above
# ORTHO_ERROR it is an error rather than something to paper over.
ORTHO_RENORM = 1e-9
ORTHO_ERROR = 1e-6


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (polar decomposition)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) pose/extrinsic: 3x3 rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        drift = np.abs(r.T @ r - np.eye(3)).max()
        if drift > ORTHO_ERROR:
            raise BadRotation(f"rotation drifted from orthonormal by {drift:.3e}")
        if np.linalg.det(r) < 0:
            raise BadRotation("rotation has negative determinant (reflection)")
        if drift > ORTHO_RENORM:
            r = _nearest_rotation(r)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return the transform applying b first, then a."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.rotation.T, -(a.rotation.T @ a.translation))


def apply(a: RigidTransform, p: np.ndarray) -> np.ndarray:
    """Apply the transform to one point or an (N, 3) array of points."""
    p = np.asarray(p, dtype=float)
    return p @ a.rotation.T + a.translation


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


@dataclass(frozen=True)
class MercatorDatum:
    """Metric grounding for GPS, frozen at a sequence's first record."""

    reference_lat: float  # degrees
    scale: float = field(init=False)
    earth_radius: float = EARTH_RADIUS

    def __post_init__(self):
        if abs(self.reference_lat) >= 90.0:
            raise PoleSingularity(f"reference latitude {self.reference_lat}")
        object.__setattr__(self, "scale",
                           math.cos(self.reference_lat * math.pi / 180.0))


def oxts_to_pose(rec, datum: MercatorDatum) -> RigidTransform:
    """Convert one GPS/IMU record to an imu->world pose.

    Translation uses the scaled Mercator projection; rotation is
    Rz(yaw) @ Ry(pitch) @ Rx(roll). The caller subtracts the first-frame
    pose when a sequence-relative world frame is wanted.
    """
    if abs(rec.lat) >= 90.0:
        raise PoleSingularity(f"latitude {rec.lat}")
    er = datum.earth_radius
    s = datum.scale
    tx = s * er * rec.lon * math.pi / 180.0
    ty = s * er * math.log(math.tan((90.0 + rec.lat) * math.pi / 360.0))
    tz = rec.alt
    r = rot_z(rec.yaw) @ rot_y(rec.pitch) @ rot_x(rec.roll)
    return RigidTransform(r, np.array([tx, ty, tz]))


def box_to_cam(box, calib):
    """Re-express a LiDAR-frame box in the rectified camera frame.

    The center goes through rect_rotation @ velo_to_cam. The yaw is
    remapped by the fixed velo->cam axis permutation: a heading of
    yaw about the LiDAR up-axis becomes -yaw about the camera's
    vertical (y, pointing down) axis.
    """
    velo_to_rect = RigidTransform(calib.rect_rotation @ calib.velo_to_cam.rotation,
                                  calib.rect_rotation @ calib.velo_to_cam.translation)
    center = apply(velo_to_rect, box.center)
    return dataclasses.replace(box, center=center, yaw=-box.yaw)


def box_corners(box) -> np.ndarray:
    """Corners of a yaw-rotated cuboid in a y-vertical (camera) frame.

    Returns an (8, 3) array: bottom face first, counter-clockwise in the
    xz plane when seen from above, then the top face in the same order.
    At yaw 0 the box length runs along z and the width along x; y is the
    vertical axis (down-positive), so the bottom face sits at +height/2.
    """
    length, width, height = box.dims
    hx, hy, hz = width / 2.0, height / 2.0, length / 2.0
    local = np.array([
        [-hx, hy, -hz], [hx, hy, -hz], [hx, hy, hz], [-hx, hy, hz],
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, -hy, hz], [-hx, -hy, hz],
    ])
    return local @ rot_y(box.yaw).T + np.asarray(box.center, dtype=float)
