#!/usr/bin/env python3
"""Regenerate the bundled mini sequence and its golden pipeline outputs.

The sequence is 3 frames of a hand-constructed ego trajectory (10 m/s
straight line) with one parked car and one van moving at 2 m/s in the
world frame. Object centers are authored by carrying known world
positions back into the per-frame LiDAR frame, so the expected verdicts
are known by construction.
"""

import math
import pathlib
import shutil
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from bevmod.cli import main as cli_main
from bevmod.geometry import (EARTH_RADIUS, MercatorDatum, apply, invert,
                             oxts_to_pose)
from bevmod.ingest import OxtsRecord

ROOT = pathlib.Path(__file__).resolve().parents[1]
SEQ = ROOT / "tests" / "data" / "mini_sequence"
GOLDEN = ROOT / "tests" / "data" / "golden"

LAT0, LON0, ALT0 = 49.0, 8.4, 110.0
DT = 0.1
EGO_SPEED = 10.0  # m/s along +x (east)


def ego_records():
    datum = MercatorDatum(LAT0)
    out = []
    for f in range(3):
        dx = EGO_SPEED * DT * f
        lon = LON0 + dx / (datum.scale * EARTH_RADIUS) * 180.0 / math.pi
        out.append(OxtsRecord(LAT0, lon, ALT0, 0.0, 0.0, 0.0, f * DT))
    return out, datum


def write_sequence():
    if SEQ.exists():
        shutil.rmtree(SEQ)
    (SEQ / "oxts" / "data").mkdir(parents=True)

    (SEQ / "calib_cam_to_cam.txt").write_text(
        "calib_time: 09-Jan-2012 13:57:47\n"
        "R_rect_00: 1 0 0 0 1 0 0 0 1\n"
        "P_rect_02: 721.5377 0 609.5593 44.85728 "
        "0 721.5377 172.854 0.2163791 0 0 1 0.002745884\n")
    # standard velo->cam axis permutation, zero offset
    (SEQ / "calib_velo_to_cam.txt").write_text(
        "R: 0 -1 0 0 0 -1 1 0 0\nT: 0 0 0\n")
    (SEQ / "calib_imu_to_velo.txt").write_text(
        "R: 1 0 0 0 1 0 0 0 1\nT: 0 0 0\n")

    records, _ = ego_records()
    stamps = []
    for f, rec in enumerate(records):
        fields = [rec.lat, rec.lon, rec.alt, rec.roll, rec.pitch, rec.yaw]
        fields += [0.0] * 24
        (SEQ / "oxts" / "data" / f"{f:010}.txt").write_text(
            " ".join(repr(v) for v in fields) + "\n")
        frac = int(round(rec.timestamp * 1e9)) % 1_000_000_000
        sec = int(rec.timestamp)
        stamps.append(f"2011-09-26 13:02:{25 + sec:02}.{frac:09}")
    (SEQ / "oxts" / "timestamps.txt").write_text("\n".join(stamps) + "\n")

    # world-frame object trajectories (world == frame-0 velo frame here,
    # because imu_to_velo is identity)
    from bevmod.geometry import compose

    datum = MercatorDatum(LAT0)
    velo_world = []
    first = None
    for rec in records:
        pose = oxts_to_pose(rec, datum)
        if first is None:
            first = invert(pose)
        velo_world.append(compose(first, pose))

    parked_world = np.array([20.0, 3.0, 0.0])
    van_start = np.array([10.0, -2.0, 0.0])
    van_vel = np.array([2.0, 0.0, 0.0])  # m/s

    lines = ["# frame track_id class cx cy cz l w h yaw"]
    for f, pose in enumerate(velo_world):
        inv = invert(pose)
        car = apply(inv, parked_world)
        van = apply(inv, van_start + van_vel * (f * DT))
        lines.append(f"{f} 1 Car " + " ".join(repr(float(v)) for v in car)
                     + " 4.0 1.8 1.5 0.0")
        lines.append(f"{f} 2 Van " + " ".join(repr(float(v)) for v in van)
                     + " 4.5 1.9 2.0 0.0")
    (SEQ / "tracklets.txt").write_text("\n".join(lines) + "\n")


def write_goldens():
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    GOLDEN.mkdir(parents=True)
    labels_dir = GOLDEN / "labels"
    raster_dir = GOLDEN / "raster"
    eval_dir = GOLDEN / "eval"
    assert cli_main(["label-gen", str(SEQ), "--out", str(labels_dir)]) == 0
    assert cli_main(["rasterize", str(SEQ), "--labels",
                     str(labels_dir / "labels.txt"),
                     "--out", str(raster_dir)]) == 0
    assert cli_main(["eval", "--pred", str(raster_dir), "--gt", str(raster_dir),
                     "--out", str(eval_dir)]) == 0


if __name__ == "__main__":
    write_sequence()
    write_goldens()
    print("fixtures written to", SEQ, "and", GOLDEN)
