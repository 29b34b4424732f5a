"""Loading a KITTI-raw-style sequence directory into pipeline inputs.

Expected layout:
    calib_cam_to_cam.txt
    calib_velo_to_cam.txt
    calib_imu_to_velo.txt
    oxts/data/NNNNNNNNNN.txt     (one file per frame)
    oxts/timestamps.txt
    tracklets.txt
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass
from typing import Dict, List

from .errors import MissingField
from .geometry import MercatorDatum, RigidTransform, compose, invert, oxts_to_pose
from .ingest import (CalibrationSet, OxtsRecord, TrackedBox,
                     build_calibration_set, parse_oxts_line, parse_timestamps,
                     parse_tracklets)


@dataclass
class Sequence:
    calib: CalibrationSet
    oxts: List[OxtsRecord]
    timestamps: List[float]
    boxes: List[TrackedBox]
    diagnostics: list


def _read(path: pathlib.Path):
    if not path.is_file():
        raise MissingField(f"missing file {path}")
    return path.read_text().splitlines()


def load_sequence(seq_dir) -> Sequence:
    root = pathlib.Path(seq_dir)
    calib = build_calibration_set(_read(root / "calib_cam_to_cam.txt"),
                                  _read(root / "calib_velo_to_cam.txt"),
                                  _read(root / "calib_imu_to_velo.txt"))
    timestamps = parse_timestamps(_read(root / "oxts" / "timestamps.txt"))
    frame_files = sorted((root / "oxts" / "data").glob("*.txt"))
    if len(frame_files) != len(timestamps):
        raise MissingField(f"{len(frame_files)} oxts frames vs "
                           f"{len(timestamps)} timestamps")
    oxts = [parse_oxts_line(f.read_text(), ts)
            for f, ts in zip(frame_files, timestamps)]
    boxes, diagnostics = parse_tracklets(_read(root / "tracklets.txt"))
    return Sequence(calib, oxts, timestamps, boxes, diagnostics)


def velo_world_poses(seq: Sequence) -> Dict[int, RigidTransform]:
    """Per-frame velo->world poses, relative to the first frame's pose."""
    datum = MercatorDatum(seq.oxts[0].lat)
    velo_to_imu = invert(seq.calib.imu_to_velo)
    first = None
    poses = {}
    for i, rec in enumerate(seq.oxts):
        imu_world = oxts_to_pose(rec, datum)
        if first is None:
            first = invert(imu_world)
        poses[i] = compose(compose(first, imu_world), velo_to_imu)
    return poses
