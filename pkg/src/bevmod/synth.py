"""Synthetic toy dataset for overfit and flow-sensitivity experiments.

Each sample is a square dropped on a textured background. Moving samples
carry a constant nonzero flow inside the square and a matching target
mask; static samples have the square in RGB only, zero flow, and an
empty target.
"""

from __future__ import annotations

import pathlib
from typing import List, Tuple

import numpy as np
from PIL import Image

from .flow_io import read_flo, write_flo

Sample = Tuple[np.ndarray, np.ndarray, np.ndarray]  # rgb, flow, target


def make_toy_samples(n: int = 10, size: int = 32, seed: int = 7) -> List[Sample]:
    """Alternating moving/static squares; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n):
        moving = k % 2 == 0
        rgb = rng.uniform(0.0, 0.3, size=(3, size, size))
        flow = np.zeros((2, size, size))
        target = np.zeros((1, size, size))
        side = int(rng.integers(8, 15))
        top = int(rng.integers(0, size - side))
        left = int(rng.integers(0, size - side))
        color = rng.uniform(0.6, 1.0, size=3)
        rgb[:, top:top + side, left:left + side] = color[:, None, None]
        if moving:
            uv = rng.uniform(2.0, 5.0, size=2) * rng.choice([-1.0, 1.0], size=2)
            flow[0, top:top + side, left:left + side] = uv[0]
            flow[1, top:top + side, left:left + side] = uv[1]
            target[0, top:top + side, left:left + side] = 1.0
        samples.append((rgb, flow, target))
    return samples


def write_toy_dataset(out_dir, samples: List[Sample]) -> None:
    """Materialize samples as rgb PNG + .flo + mask PNG triples."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (rgb, flow, target) in enumerate(samples):
        img = (np.clip(rgb, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(img).save(out / f"rgb_{i:03}.png")
        write_flo(out / f"flow_{i:03}.flo", flow.transpose(1, 2, 0))
        mask = (target[0] * 255).astype(np.uint8)
        Image.fromarray(mask, mode="L").save(out / f"mask_{i:03}.png")


def read_toy_dataset(data_dir) -> List[Sample]:
    """Load every rgb/flow/mask triple from a dataset directory."""
    root = pathlib.Path(data_dir)
    samples = []
    for rgb_path in sorted(root.glob("rgb_*.png")):
        stem = rgb_path.stem.split("_", 1)[1]
        rgb = np.asarray(Image.open(rgb_path).convert("RGB"), dtype=float)
        rgb = rgb.transpose(2, 0, 1) / 255.0
        flow = read_flo(root / f"flow_{stem}.flo").astype(float).transpose(2, 0, 1)
        mask = np.asarray(Image.open(root / f"mask_{stem}.png").convert("L"))
        target = (mask > 127).astype(float)[None]
        samples.append((rgb, flow, target))
    return samples
