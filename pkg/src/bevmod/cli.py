"""Command-line pipeline: label-gen, rasterize, ipm-baseline, eval, train-toy, viz.

Diagnostics go to stderr; data goes to files; stdout carries the
human-readable report. Every subcommand writes a run manifest before any
output and writes outputs atomically (temp + rename), so a re-run with
an identical manifest reproduces outputs bitwise.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import pathlib
import sys

import numpy as np

from . import __version__
from .bev_raster import (BevGrid, GridSpec, boxes_to_grid, read_mask,
                         render_png, write_mask)
from .errors import BevModError
from .evaluate import (ConfusionMatrix, RangeBins, accumulate,
                       bin_confusions, miou)
from .fusion_net import (NetConfig, balanced_weights, build_network,
                         save_checkpoint, train_step)
from .geometry import box_to_cam
from .ipm import Correspondence, estimate_homography, warp_mask
from .motion_labeling import (LabelingConfig, format_labels, label_sequence,
                              parse_labels, review_candidates)
from .sequence import load_sequence, velo_world_poses
from .synth import make_toy_samples, read_toy_dataset, write_toy_dataset


def _atomic_write(path: pathlib.Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_manifest(out_dir: pathlib.Path, command: str, config: dict) -> None:
    payload = {"tool_version": __version__, "command": command, **config}
    text = json.dumps(payload, sort_keys=True, indent=2)
    digest = hashlib.sha256(text.encode()).hexdigest()
    payload["config_digest"] = digest
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "manifest.json",
                  (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode())


def _grid_spec(args) -> GridSpec:
    return GridSpec(z_range=(0.0, args.max_range),
                    x_range=(-args.max_range / 2.0, args.max_range / 2.0),
                    resolution=args.resolution)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=float, default=0.2,
                   help="BEV grid resolution in meters per pixel")
    p.add_argument("--max-range", type=float, default=50.0,
                   help="forward clip distance in meters")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="moving/static speed threshold in m/s")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--config", help="key=value config file (flags win)")


def cmd_label_gen(args) -> int:
    out = pathlib.Path(args.out)
    seq = load_sequence(args.sequence_dir)
    cfg = LabelingConfig(speed_threshold=args.threshold,
                         min_track_length=args.min_track_length,
                         max_range=args.max_range)
    _write_manifest(out, "label-gen", {
        "inputs": {"sequence_dir": str(args.sequence_dir)},
        "labeling": {"speed_threshold": cfg.speed_threshold,
                     "min_track_length": cfg.min_track_length,
                     "max_range": cfg.max_range},
        "seed": args.seed,
    })
    poses = velo_world_poses(seq)
    timestamps = dict(enumerate(seq.timestamps))
    labels = label_sequence(seq.boxes, poses, timestamps, cfg)
    _atomic_write(out / "labels.txt", format_labels(labels).encode())
    _atomic_write(out / "review.txt",
                  format_labels(review_candidates(labels, cfg)).encode())
    for diag in seq.diagnostics:
        print(f"skipped unknown class {diag.class_name!r} "
              f"on line {diag.line_number}", file=sys.stderr)
    print(f"wrote {len(labels)} labels to {out / 'labels.txt'}")
    return 0


def _rasterize_frame(frame, boxes, verdicts, calib, spec):
    cam_boxes = [box_to_cam(b, calib) for b in boxes]
    return frame, boxes_to_grid(cam_boxes, verdicts, spec)


def cmd_rasterize(args) -> int:
    out = pathlib.Path(args.out)
    seq = load_sequence(args.sequence_dir)
    labels = parse_labels(pathlib.Path(args.labels).read_text().splitlines())
    spec = _grid_spec(args)
    _write_manifest(out, "rasterize", {
        "inputs": {"sequence_dir": str(args.sequence_dir),
                   "labels": str(args.labels)},
        "grid": {"resolution": spec.resolution, "z_range": list(spec.z_range),
                 "x_range": list(spec.x_range)},
        "seed": args.seed,
    })
    verdict_by = {(l.track_id, l.frame_index): l.verdict for l in labels}
    frames: dict = {}
    for box in seq.boxes:
        key = (box.track_id, box.frame_index)
        if key not in verdict_by:
            continue
        frames.setdefault(box.frame_index, []).append((box, verdict_by[key]))
    tasks = sorted(frames)
    results = {}
    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(args.jobs) as pool:
            futs = [pool.submit(_rasterize_frame, f,
                                [b for b, _ in frames[f]],
                                [v for _, v in frames[f]], seq.calib, spec)
                    for f in tasks]
            for fut in futs:
                frame, grid = fut.result()
                results[frame] = grid
    else:
        for f in tasks:
            _, grid = _rasterize_frame(f, [b for b, _ in frames[f]],
                                       [v for _, v in frames[f]],
                                       seq.calib, spec)
            results[f] = grid
    for frame in tasks:
        grid = results[frame]
        _atomic_write(out / f"bev_{frame:06}.mask", write_mask(grid))
        _atomic_write(out / f"bev_{frame:06}.png", render_png(grid))
    print(f"rasterized {len(tasks)} frames to {out}")
    return 0


def _load_pairs(args):
    pairs = []
    if args.pairs:
        for line in pathlib.Path(args.pairs).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            u, v, x, z = (float(t) for t in line.replace(",", " ").split())
            pairs.append(Correspondence((u, v), (x, z)))
    for spec in args.pair or []:
        u, v, x, z = (float(t) for t in spec.split(","))
        pairs.append(Correspondence((u, v), (x, z)))
    if len(pairs) != 4:
        raise BevModError(f"need exactly 4 correspondences, got {len(pairs)}")
    return pairs


def cmd_ipm_baseline(args) -> int:
    out = pathlib.Path(args.out)
    pairs = _load_pairs(args)
    hom = estimate_homography(pairs)
    spec = _grid_spec(args)
    _write_manifest(out, "ipm-baseline", {
        "inputs": {"front_mask": str(args.front_mask),
                   "gt": str(args.gt) if args.gt else None},
        "grid": {"resolution": spec.resolution, "z_range": list(spec.z_range),
                 "x_range": list(spec.x_range)},
        "homography": " ".join(repr(v) for v in hom.h.ravel()),
        "seed": args.seed,
    })
    front = read_mask(pathlib.Path(args.front_mask).read_bytes()).cells
    warped = warp_mask(front, hom, spec)
    _atomic_write(out / "warped.mask", write_mask(warped))
    _atomic_write(out / "warped.png", render_png(warped))
    if args.gt:
        gt = read_mask(pathlib.Path(args.gt).read_bytes(), spec)
        score = miou(accumulate(warped, gt, ConfusionMatrix()))
        _atomic_write(out / "report.kv", f"miou={score:.6f}\n".encode())
        print(f"miou={score:.6f}")
    return 0


def cmd_eval(args) -> int:
    out = pathlib.Path(args.out)
    pred_dir = pathlib.Path(args.pred)
    gt_dir = pathlib.Path(args.gt)
    _write_manifest(out, "eval", {
        "inputs": {"pred": str(pred_dir), "gt": str(gt_dir)},
        "moving_only": args.moving_only,
        "seed": args.seed,
    })
    names = sorted(p.name for p in pred_dir.glob("*.mask"))
    if not names:
        print("no .mask files in prediction directory", file=sys.stderr)
        return 2
    bins = RangeBins()
    global_cm = ConfusionMatrix()
    bin_cms = [ConfusionMatrix() for _ in range(len(bins.edges) - 1)]
    for name in names:
        pred = read_mask((pred_dir / name).read_bytes())
        gt = read_mask((gt_dir / name).read_bytes(), pred.spec)
        accumulate(pred, gt, global_cm)
        for i, cm in enumerate(bin_confusions(pred, gt, bins)):
            bin_cms[i] = bin_cms[i].merge(cm)
    global_miou = miou(global_cm, moving_only=args.moving_only)
    per_bin = [miou(cm, moving_only=args.moving_only) for cm in bin_cms]
    lines = [f"frames evaluated: {len(names)}",
             f"global mIoU: {global_miou:.4f}"]
    kv = [f"frames={len(names)}", f"miou_global={global_miou:.6f}"]
    for (lo, hi), v in zip(zip(bins.edges, bins.edges[1:]), per_bin):
        lines.append(f"  {int(lo):2d}-{int(hi):2d}m mIoU: {v:.4f}")
        kv.append(f"miou_{int(lo)}_{int(hi)}={v:.6f}")
    report = "\n".join(lines) + "\n"
    _atomic_write(out / "report.txt", report.encode())
    _atomic_write(out / "report.kv", ("\n".join(kv) + "\n").encode())
    from .figures import save_range_miou_figure
    save_range_miou_figure(out / "range_miou.png", bins.edges, per_bin, global_miou)
    sys.stdout.write(report)
    return 0


def cmd_train_toy(args) -> int:
    out = pathlib.Path(args.out)
    _write_manifest(out, "train-toy", {
        "inputs": {"data": str(args.data)},
        "seed": args.seed, "steps": args.steps, "lr": args.lr,
    })
    data_dir = pathlib.Path(args.data)
    if args.synthesize:
        write_toy_dataset(data_dir, make_toy_samples(args.synthesize, seed=args.seed))
    samples = read_toy_dataset(data_dir)
    if not samples:
        print(f"no samples found in {data_dir}", file=sys.stderr)
        return 2
    size = samples[0][0].shape[1:]
    net = build_network(NetConfig(input_size=size), seed=args.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    weights = balanced_weights(np.concatenate([t for _, _, t in samples]))
    losses = []
    for step in range(args.steps):
        loss = train_step(net, samples, args.lr, weights=weights,
                          velocity=velocity)
        losses.append(loss)
        if (step + 1) % max(1, args.steps // 10) == 0:
            print(f"step {step + 1}: loss {loss:.6f}", file=sys.stderr)
    _atomic_write(out / "checkpoint.bin", save_checkpoint(net))
    log = "".join(f"{i + 1} {v:.10f}\n" for i, v in enumerate(losses))
    _atomic_write(out / "loss_log.txt", log.encode())
    from .figures import save_loss_figure
    save_loss_figure(out / "loss_curve.png", losses)
    print(f"final loss {losses[-1]:.6f} after {len(losses)} steps")
    return 0


def cmd_viz(args) -> int:
    out = pathlib.Path(args.out)
    _write_manifest(out, "viz", {"inputs": {"mask": str(args.mask)},
                                 "seed": args.seed})
    grid = read_mask(pathlib.Path(args.mask).read_bytes())
    name = pathlib.Path(args.mask).stem + ".png"
    _atomic_write(out / name, render_png(grid))
    print(f"wrote {out / name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevmod",
        description="BEV moving-object-detection tooling: auto-labeling, "
                    "rasterization, IPM baseline, toy training, evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("label-gen", help="auto-label tracks as moving/static")
    p.add_argument("sequence_dir")
    p.add_argument("--min-track-length", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_label_gen)

    p = sub.add_parser("rasterize", help="paint labeled boxes into BEV grids")
    p.add_argument("sequence_dir")
    p.add_argument("--labels", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("ipm-baseline", help="warp a front-view mask to BEV")
    p.add_argument("--front-mask", required=True)
    p.add_argument("--pairs", help="4-line file of u v x z correspondences")
    p.add_argument("--pair", action="append",
                   help="one u,v,x,z correspondence (repeat 4 times)")
    p.add_argument("--gt", help="BEV ground-truth mask to score against")
    _add_common(p)
    p.set_defaults(func=cmd_ipm_baseline)

    p = sub.add_parser("eval", help="score prediction masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--moving-only", action="store_true",
                   help="report moving-class IoU instead of the two-class mean")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="train the toy fusion net")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--synthesize", type=int, default=0, metavar="N",
                   help="generate an N-sample synthetic dataset first")
    _add_common(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("viz", help="render a BEV mask file to PNG")
    p.add_argument("mask")
    _add_common(p)
    p.set_defaults(func=cmd_viz)
    return parser


def _apply_config_file(parser, argv):
    # pre-scan for --config so file values become defaults (flags win)
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    overrides = {}
    for line in pathlib.Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        overrides[key.strip().replace("-", "_")] = value.strip()
    for action_parser in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest: a for a in action_parser._actions}
        defaults = {}
        for key, value in overrides.items():
            if key in known and known[key].type is not None:
                defaults[key] = known[key].type(value)
            elif key in known:
                defaults[key] = value
        action_parser.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except BevModError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
