"""Parsers for KITTI-raw-style sensor logs.

Covers camera calibration, velo->cam / imu->velo extrinsics, per-frame
GPS/IMU records with their timestamps file, and the line-oriented
tracklet schema (one box per line: `frame track_id class cx cy cz l w h yaw`).
Only the left color camera (`P_rect_02`) is consumed.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import BadRotation, MalformedLine, MissingField, ParseError
from .geometry import RigidTransform, _nearest_rotation

CLASS_NAMES = ("Car", "Truck", "Van", "Pedestrian", "Cyclist")


@dataclass(frozen=True)
class CalibrationSet:
    """Camera projection/rectification plus the two sensor extrinsics."""

    cam_projection: np.ndarray  # 3x4, pixels
    rect_rotation: np.ndarray   # 3x3
    velo_to_cam: RigidTransform
    imu_to_velo: RigidTransform


@dataclass(frozen=True)
class OxtsRecord:
    """One GPS/IMU sample: position in degrees/meters, attitude in radians."""

    lat: float
    lon: float
    alt: float
    roll: float
    pitch: float
    yaw: float
    timestamp: float  # seconds, fractional


@dataclass(frozen=True)
class TrackedBox:
    """A 3D object box in a named frame at one frame index."""

    track_id: int
    class_name: str
    center: np.ndarray  # 3-vector, meters
    dims: tuple         # (length, width, height), meters
    yaw: float          # radians
    frame_index: int


@dataclass(frozen=True)
class UnknownClass:
    """Diagnostic for a box whose class is outside the 5-class set."""

    line_number: int
    class_name: str


def _parse_floats(text: str, expect: int, context: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != expect:
        raise MalformedLine(f"{context}: expected {expect} values, got {len(parts)}")
    try:
        vals = np.array([float(p) for p in parts])
    except ValueError as e:
        raise MalformedLine(f"{context}: {e}") from e
    if not np.all(np.isfinite(vals)):
        raise MalformedLine(f"{context}: non-finite value")
    return vals


def _keyed_lines(stream: Iterable[str]) -> dict:
    out = {}
    for line in stream:
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        out[key.strip()] = rest.strip()
    return out


def parse_cam_calib(stream: Iterable[str]) -> dict:
    """Parse `calib_cam_to_cam.txt` content.

    Returns {"cam_projection": 3x4, "rect_rotation": 3x3}; unknown keys
    are ignored.
    """
    entries = _keyed_lines(stream)
    for key in ("P_rect_02", "R_rect_00"):
        if key not in entries:
            raise MissingField(f"missing key {key}")
    proj = _parse_floats(entries["P_rect_02"], 12, "P_rect_02").reshape(3, 4)
    rect = _parse_floats(entries["R_rect_00"], 9, "R_rect_00").reshape(3, 3)
    return {"cam_projection": proj, "rect_rotation": rect}


def serialize_cam_calib(cam_projection: np.ndarray, rect_rotation: np.ndarray) -> str:
    """Inverse of parse_cam_calib; floats written at full precision."""
    lines = [
        "R_rect_00: " + " ".join(repr(float(v)) for v in rect_rotation.ravel()),
        "P_rect_02: " + " ".join(repr(float(v)) for v in cam_projection.ravel()),
    ]
    return "\n".join(lines) + "\n"


def parse_extrinsic(stream: Iterable[str], key_r: str = "R", key_t: str = "T") -> RigidTransform:
    """Parse an `R:`/`T:` extrinsic file into a RigidTransform.

    Rotations with orthonormality drift above 1e-3 are rejected; smaller
    drift is projected back onto SO(3).
    """
    entries = _keyed_lines(stream)
    for key in (key_r, key_t):
        if key not in entries:
            raise MissingField(f"missing key {key}")
    r = _parse_floats(entries[key_r], 9, key_r).reshape(3, 3)
    t = _parse_floats(entries[key_t], 3, key_t)
    drift = np.abs(r.T @ r - np.eye(3)).max()
    if drift > 1e-3 or np.linalg.det(r) < 0:
        raise BadRotation(f"extrinsic rotation drift {drift:.3e}, det {np.linalg.det(r):.3f}")
    if drift > 1e-9:
        r = _nearest_rotation(r)
    return RigidTransform(r, t)


def parse_oxts_line(line: str, timestamp: float = 0.0) -> OxtsRecord:
    """Parse one GPS/IMU log line (first six fields; the rest ignored)."""
    parts = line.split()
    if len(parts) < 6:
        raise MalformedLine(f"oxts line has {len(parts)} fields, need >= 6")
    try:
        lat, lon, alt, roll, pitch, yaw = (float(p) for p in parts[:6])
    except ValueError as e:
        raise MalformedLine(str(e)) from e
    for v in (lat, lon, alt, roll, pitch, yaw):
        if not math.isfinite(v):
            raise MalformedLine("non-finite value in oxts line")
    if not -90.0 <= lat <= 90.0:
        raise MalformedLine(f"latitude {lat} out of range")
    if not -180.0 <= lon <= 180.0:
        raise MalformedLine(f"longitude {lon} out of range")
    return OxtsRecord(lat, lon, alt, roll, pitch, yaw, timestamp)


def parse_timestamps(stream: Iterable[str]) -> list:
    """Parse a timestamps file (one ISO-like stamp per line) to seconds.

    Accepts `YYYY-MM-DD HH:MM:SS.fffffffff` with up to nanosecond digits,
    or a bare float number of seconds.
    """
    out = []
    for n, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(float(line))
            continue
        except ValueError:
            pass
        base, _, frac = line.partition(".")
        try:
            dt = datetime.datetime.fromisoformat(base)
        except ValueError as e:
            raise MalformedLine(f"timestamps line {n}: {e}") from e
        seconds = dt.replace(tzinfo=datetime.timezone.utc).timestamp()
        if frac:
            seconds += float("0." + frac)
        out.append(seconds)
    return out


def parse_tracklets(stream: Iterable[str]):
    """Parse the line-oriented tracklet schema.

    Returns (boxes, diagnostics): boxes sorted by (track_id, frame_index),
    diagnostics holding one UnknownClass per skipped out-of-set class.
    `#`-prefixed comment lines and blank lines are ignored.
    """
    boxes = []
    diagnostics = []
    for n, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 10:
            raise ParseError(f"line {n}: expected 10 fields, got {len(parts)}")
        try:
            frame = int(parts[0])
            track_id = int(parts[1])
            cls = parts[2]
            vals = [float(p) for p in parts[3:]]
        except ValueError as e:
            raise ParseError(f"line {n}: {e}") from e
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"line {n}: non-finite value")
        if cls not in CLASS_NAMES:
            diagnostics.append(UnknownClass(n, cls))
            continue
        length, width, height = vals[3:6]
        if length <= 0 or width <= 0 or height <= 0:
            raise ParseError(f"line {n}: non-positive box dimensions")
        boxes.append(TrackedBox(track_id=track_id, class_name=cls,
                                center=np.array(vals[0:3]),
                                dims=(length, width, height),
                                yaw=vals[6], frame_index=frame))
    boxes.sort(key=lambda b: (b.track_id, b.frame_index))
    return boxes, diagnostics


def build_calibration_set(cam_stream, velo_stream, imu_stream) -> CalibrationSet:
    """Assemble a full CalibrationSet from the three calibration files."""
    cam = parse_cam_calib(cam_stream)
    rect = cam["rect_rotation"]
    drift = np.abs(rect.T @ rect - np.eye(3)).max()
    if drift > 1e-6:
        raise BadRotation(f"rectification rotation drift {drift:.3e}")
    return CalibrationSet(cam_projection=cam["cam_projection"],
                          rect_rotation=rect,
                          velo_to_cam=parse_extrinsic(velo_stream),
                          imu_to_velo=parse_extrinsic(imu_stream))
