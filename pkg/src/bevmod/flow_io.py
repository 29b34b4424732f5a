"""Middlebury .flo optical flow reader/writer."""

from __future__ import annotations

import numpy as np

FLO_MAGIC = 202021.25


def read_flo(path) -> np.ndarray:
    """Read a .flo file into an (H, W, 2) float32 array of (u, v) flow."""
    with open(path, "rb") as f:
        magic = np.fromfile(f, np.float32, count=1)
        if magic.size != 1 or magic[0] != FLO_MAGIC:
            raise ValueError(f"{path}: bad .flo magic {magic}")
        w = int(np.fromfile(f, np.int32, count=1)[0])
        h = int(np.fromfile(f, np.int32, count=1)[0])
        data = np.fromfile(f, np.float32, count=2 * w * h)
    if data.size != 2 * w * h:
        raise ValueError(f"{path}: truncated .flo payload")
    return data.reshape(h, w, 2)


def write_flo(path, flow: np.ndarray) -> None:
    """Write an (H, W, 2) array as a .flo file."""
    h, w, c = flow.shape
    if c != 2:
        raise ValueError("flow must have 2 channels")
    with open(path, "wb") as f:
        np.array([FLO_MAGIC], dtype=np.float32).tofile(f)
        np.array([w, h], dtype=np.int32).tofile(f)
        flow.astype(np.float32).tofile(f)
