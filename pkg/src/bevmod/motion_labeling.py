"""Automatic moving/static labeling from ego-motion and object tracks.

Object centers are carried into the world frame via per-frame ego poses,
differenced across consecutive frames, and thresholded on speed. Speed is
measured on the horizontal world plane only so altitude noise cannot flip
verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .errors import BadTimestamps, MissingPose
from .geometry import RigidTransform, apply, compose, invert

MOVING = "Moving"
STATIC = "Static"


@dataclass(frozen=True)
class MotionLabel:
    track_id: int
    frame_index: int
    verdict: str  # MOVING or STATIC
    relative_speed: float  # m/s, >= 0
    class_name: str


@dataclass(frozen=True)
class LabelingConfig:
    speed_threshold: float = 0.5   # m/s; Moving iff speed > threshold (strict)
    min_track_length: int = 2      # frames
    max_range: float = 50.0        # meters

    def __post_init__(self):
        if self.speed_threshold <= 0:
            raise ValueError("speed_threshold must be positive")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


def ego_motion(pose_t: RigidTransform, pose_t1: RigidTransform) -> RigidTransform:
    """Frame-t1 velo coordinates expressed in frame-t velo coordinates."""
    return compose(invert(pose_t), pose_t1)


def object_world_track(boxes, poses: Dict[int, RigidTransform]) -> Dict[int, np.ndarray]:
    """World position of one track's box center at each of its frames."""
    out = {}
    for box in boxes:
        pose = poses.get(box.frame_index)
        if pose is None:
            raise MissingPose(f"no pose for frame {box.frame_index}")
        out[box.frame_index] = apply(pose, box.center)
    return out


def track_speeds(world_positions: Sequence[np.ndarray],
                 timestamps: Sequence[float]) -> np.ndarray:
    """Per-frame horizontal speed via forward differences.

    The last frame reuses the preceding difference; the vertical (z)
    world component is dropped.
    """
    ts = np.asarray(timestamps, dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise BadTimestamps("timestamps must be strictly increasing")
    pos = np.asarray(world_positions, dtype=float)[:, :2]
    if len(pos) == 1:
        return np.zeros(1)
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1) / np.diff(ts)
    return np.append(step, step[-1])


def classify_track(boxes, world_positions: Dict[int, np.ndarray],
                   timestamps: Dict[int, float],
                   cfg: LabelingConfig) -> List[MotionLabel]:
    """Label every frame of one track as Moving or Static."""
    frames = sorted(world_positions)
    ts = [timestamps[f] for f in frames]
    by_frame = {b.frame_index: b for b in boxes}
    if len(frames) < cfg.min_track_length:
        speeds = np.zeros(len(frames))
        verdicts = [STATIC] * len(frames)
    else:
        speeds = track_speeds([world_positions[f] for f in frames], ts)
        verdicts = [MOVING if s > cfg.speed_threshold else STATIC for s in speeds]
    return [MotionLabel(track_id=by_frame[f].track_id, frame_index=f,
                        verdict=v, relative_speed=float(s),
                        class_name=by_frame[f].class_name)
            for f, v, s in zip(frames, verdicts, speeds)]


def label_sequence(boxes, poses: Dict[int, RigidTransform],
                   timestamps: Dict[int, float],
                   cfg: LabelingConfig) -> List[MotionLabel]:
    """Run classify_track over every track; output sorted by (track, frame)."""
    tracks: Dict[int, list] = {}
    for box in boxes:
        tracks.setdefault(box.track_id, []).append(box)
    labels = []
    for tid in sorted(tracks):
        tb = sorted(tracks[tid], key=lambda b: b.frame_index)
        world = object_world_track(tb, poses)
        labels.extend(classify_track(tb, world, timestamps, cfg))
    labels.sort(key=lambda l: (l.track_id, l.frame_index))
    return labels


def format_labels(labels: Sequence[MotionLabel]) -> str:
    """Serialize labels, one `frame track_id class verdict speed` per line."""
    lines = [f"{l.frame_index} {l.track_id} {l.class_name} {l.verdict} {l.relative_speed:.6f}"
             for l in sorted(labels, key=lambda l: (l.track_id, l.frame_index))]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_labels(stream) -> List[MotionLabel]:
    """Inverse of format_labels."""
    out = []
    for line in stream:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        frame, tid, cls, verdict, speed = line.split()
        out.append(MotionLabel(track_id=int(tid), frame_index=int(frame),
                               verdict=verdict, relative_speed=float(speed),
                               class_name=cls))
    return out


def review_candidates(labels: Sequence[MotionLabel],
                      cfg: LabelingConfig,
                      band: float = 0.2) -> List[MotionLabel]:
    """Labels whose speed sits within +/-band of the threshold.

    These are the verdicts most likely to be thresholding mistakes and
    are emitted to a separate review file by the CLI.
    """
    lo = cfg.speed_threshold * (1.0 - band)
    hi = cfg.speed_threshold * (1.0 + band)
    return [l for l in labels if lo <= l.relative_speed <= hi]
