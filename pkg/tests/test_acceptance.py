"""End-to-end acceptance suite.

Each test states one verifiable property of the pipeline with an
explicit tolerance and, where relevant, a wall-clock budget. These are
the release criteria; everything else in tests/ is unit coverage.
"""

import time

import numpy as np
import pytest
import shapely
from shapely.geometry import Polygon

from bevmod.bev_raster import (MOVING_CELL, STATIC_CELL, BevGrid, GridSpec,
                               footprint, rasterize)
from bevmod.cli import main
from bevmod.evaluate import (ConfusionMatrix, accumulate, bin_confusions,
                             miou)
from bevmod.fusion_net import (NetConfig, _sigmoid, balanced_weights,
                               build_network, forward, grad_check, predict,
                               train_step)
from bevmod.geometry import RigidTransform, apply, invert, rot_z
from bevmod.ingest import TrackedBox
from bevmod.ipm import (Correspondence, Homography, estimate_homography,
                        ipm_baseline)
from bevmod.motion_labeling import (MOVING, STATIC, LabelingConfig,
                                    label_sequence)
from bevmod.synth import make_toy_samples

from conftest import PlanarScene


def test_01_homography_recovery_1000_random_sets():
    rng = np.random.default_rng(0)
    checked = 0
    elapsed = 0.0
    while checked < 1000:
        truth = rng.normal(size=(3, 3))
        if abs(np.linalg.det(truth)) < 0.1:
            continue
        src = rng.uniform(0, 100, size=(4, 2))
        mapped = np.column_stack([src, np.ones(4)]) @ truth.T
        if np.any(np.abs(mapped[:, 2]) < 1e-3):
            continue
        dst = mapped[:, :2] / mapped[:, 2:]
        pairs = [Correspondence(tuple(s), tuple(d))
                 for s, d in zip(src, dst)]
        t0 = time.perf_counter()
        try:
            est = estimate_homography(pairs)
        except Exception:
            elapsed += time.perf_counter() - t0
            continue
        elapsed += time.perf_counter() - t0
        assert np.linalg.norm(est.h - Homography(truth).h) < 1e-6
        checked += 1
    assert elapsed < 1.0, f"estimation took {elapsed:.2f}s for 1000 sets"


def test_02_rasterization_matches_brute_force_oracle():
    spec = GridSpec()
    rng = np.random.default_rng(1)
    xs, zs = spec.cell_centers_x(), spec.cell_centers_z()
    xg, zg = np.meshgrid(xs, zs)
    pts = shapely.points(xg.ravel(), zg.ravel())
    raster_time = 0.0
    for _ in range(20):
        polys = []
        for _ in range(100):
            box = TrackedBox(0, "Car",
                             np.array([rng.uniform(-27, 27), 0.0,
                                       rng.uniform(-2, 52)]),
                             (rng.uniform(1, 6), rng.uniform(1, 3), 1.5),
                             rng.uniform(-np.pi, np.pi), 0)
            polys.append((footprint(box),
                          MOVING if rng.uniform() < 0.5 else STATIC))
        t0 = time.perf_counter()
        grid = rasterize(polys, spec)
        raster_time += time.perf_counter() - t0
        moving = np.zeros(xg.size, dtype=bool)
        static = np.zeros(xg.size, dtype=bool)
        for poly, verdict in polys:
            covered = shapely.covers(Polygon(poly), pts)
            (moving if verdict == MOVING else static)[covered] = True
        expect = np.zeros(xg.size, dtype=np.uint8)
        expect[static] = STATIC_CELL
        expect[moving] = MOVING_CELL
        assert np.array_equal(grid.cells,
                              expect.reshape(spec.height, spec.width))
    assert raster_time < 5.0, f"rasterize took {raster_time:.2f}s"


def test_03_ego_compensation_across_thresholds():
    n, dt = 5, 0.1
    poses = {f: RigidTransform(np.eye(3), np.array([10.0 * dt * f, 0, 0]))
             for f in range(n)}
    ts = {f: f * dt for f in range(n)}
    parked = np.array([20.0, 3.0, 0.0])
    mover = np.array([10.0, -2.0, 0.0])
    boxes = []
    for f in range(n):
        inv = invert(poses[f])
        boxes.append(TrackedBox(1, "Car", apply(inv, parked),
                                (4.0, 2.0, 1.5), 0.0, f))
        boxes.append(TrackedBox(2, "Car",
                                apply(inv, mover + [2.0 * dt * f, 0, 0]),
                                (4.0, 2.0, 1.5), 0.0, f))
    for thr in (0.2, 0.5, 1.0):
        labels = label_sequence(boxes, poses, ts,
                                LabelingConfig(speed_threshold=thr))
        verdicts = {}
        for l in labels:
            verdicts.setdefault(l.track_id, set()).add(l.verdict)
        assert verdicts[1] == {STATIC}, f"parked misread at {thr} m/s"
        assert verdicts[2] == {MOVING}, f"mover misread at {thr} m/s"


def test_04_gradient_check_default_network():
    net = build_network(NetConfig(), seed=3)
    assert net.param_count() <= 5000
    rng = np.random.default_rng(103)
    rgb = rng.uniform(0, 1, size=(3, 32, 32))
    flow = rng.normal(size=(2, 32, 32))
    target = (rng.uniform(size=(1, 32, 32)) > 0.7).astype(float)
    t0 = time.perf_counter()
    worst = grad_check(net, rgb, flow, target)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"max relative gradient error {worst:.2e}"
    assert elapsed < 60.0, f"grad_check took {elapsed:.1f}s"


def test_05_overfit_and_flow_sensitivity():
    samples = make_toy_samples()  # 10 alternating moving/static squares
    weights = balanced_weights(
        np.concatenate([t.ravel() for _, _, t in samples]).reshape(1, 1, -1))
    net = build_network(NetConfig(), seed=3)
    velocity = {n: np.zeros_like(v) for n, v in net.params.items()}
    t0 = time.perf_counter()
    for step in range(500):
        loss = train_step(net, samples, lr=0.05, weights=weights,
                          velocity=velocity)
        if loss < 1e-3:
            break
    elapsed = time.perf_counter() - t0
    inter = union = 0
    for rgb, flow, target in samples:
        pred = predict(net, rgb, flow)
        gt = target[0] > 0.5
        inter += int(np.sum(pred & gt))
        union += int(np.sum(pred | gt))
    iou_moving = inter / union
    assert iou_moving > 0.9, f"training IoU(moving) {iou_moving:.3f}"
    assert elapsed < 300.0, f"training took {elapsed:.1f}s"

    # flow sensitivity: kill the flow input of a moving sample and the
    # mean moving-probability over its ground-truth region collapses
    rgb, flow, target = samples[0]
    region = target[0] > 0.5
    with_flow = _sigmoid(forward(net, rgb, flow))[0][region].mean()
    without = _sigmoid(forward(net, rgb, np.zeros_like(flow)))[0][region].mean()
    assert with_flow > 0.5
    assert without < 0.5, f"flow-blind probability {without:.3f}"


def test_06_metric_hand_cases_and_bin_additivity():
    assert miou(ConfusionMatrix(tp=6, fp=2, fn=2, tn=6)) == pytest.approx(0.6)
    assert miou(ConfusionMatrix(tp=9, tn=91)) == 1.0
    assert miou(ConfusionMatrix(fp=8, fn=8)) == 0.0
    spec = GridSpec()
    rng = np.random.default_rng(2)
    for _ in range(50):
        pred = BevGrid(spec, rng.integers(0, 3, size=(250, 250)).astype(np.uint8))
        gt = BevGrid(spec, rng.integers(0, 3, size=(250, 250)).astype(np.uint8))
        total = accumulate(pred, gt, ConfusionMatrix())
        merged = ConfusionMatrix()
        for cm in bin_confusions(pred, gt):
            merged = merged.merge(cm)
        assert (merged.tp, merged.fp, merged.fn, merged.tn) == \
            (total.tp, total.fp, total.fn, total.tn)


def test_07_ipm_strictly_below_direct_rasterization():
    scene = PlanarScene()
    spec = GridSpec()
    # ground truth: one object occupying x [-2,2], z [8,12] on the ground
    box = TrackedBox(0, "Car", np.array([0.0, 0.0, 10.0]), (4.0, 4.0, 1.5),
                     0.0, 0)
    gt = rasterize([(footprint(box), MOVING)], spec)
    direct_score = miou(accumulate(gt, gt, ConfusionMatrix()))
    assert direct_score == 1.0
    # the front view sees the object's body 1 m off the ground, so the
    # flat-ground warp misplaces it
    hom = estimate_homography(scene.correspondences())
    front = scene.render_rect(-2, 2, 8, 12, MOVING_CELL, height=1.0)
    _, ipm_score = ipm_baseline(front, hom, spec, gt)
    assert ipm_score < direct_score, \
        f"IPM {ipm_score:.3f} not below direct {direct_score:.3f}"


def test_08_cli_reruns_are_bitwise_identical(mini_sequence, golden, tmp_path):
    scene = PlanarScene()
    front = scene.render_rect(-2, 2, 5, 15, MOVING_CELL)
    from bevmod.bev_raster import write_mask
    front_path = tmp_path / "front.mask"
    fspec = GridSpec(z_range=(0.0, 480.0), x_range=(0.0, 640.0),
                     resolution=1.0)
    front_path.write_bytes(write_mask(BevGrid(fspec, front)))
    pair_args = [f"--pair={c.src[0]},{c.src[1]},{c.dst[0]},{c.dst[1]}"
                 for c in scene.correspondences()]
    runs = {
        "label-gen": ["label-gen", str(mini_sequence)],
        "rasterize": ["rasterize", str(mini_sequence),
                      "--labels", str(golden / "labels" / "labels.txt")],
        "ipm-baseline": ["ipm-baseline", "--front-mask", str(front_path)]
        + pair_args,
        "eval": ["eval", "--pred", str(golden / "raster"),
                 "--gt", str(golden / "raster")],
        "train-toy": ["train-toy", "--data", str(tmp_path / "toydata"),
                      "--synthesize", "4", "--steps", "3"],
        "viz": ["viz", str(golden / "raster" / "bev_000000.mask")],
    }
    for name, argv in runs.items():
        outs = []
        for k in (1, 2):
            out = tmp_path / f"{name}-{k}"
            assert main(argv + ["--out", str(out)]) == 0, name
            outs.append(out)
        files = sorted(p.name for p in outs[0].iterdir())
        assert files == sorted(p.name for p in outs[1].iterdir())
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), \
                f"{name}/{f} differs between identical runs"


def test_09_golden_pipeline_byte_for_byte(mini_sequence, golden, tmp_path):
    t0 = time.perf_counter()
    labels_out = tmp_path / "labels"
    raster_out = tmp_path / "raster"
    eval_out = tmp_path / "eval"
    assert main(["label-gen", str(mini_sequence),
                 "--out", str(labels_out)]) == 0
    assert main(["rasterize", str(mini_sequence),
                 "--labels", str(labels_out / "labels.txt"),
                 "--out", str(raster_out)]) == 0
    assert main(["eval", "--pred", str(raster_out),
                 "--gt", str(raster_out), "--out", str(eval_out)]) == 0
    elapsed = time.perf_counter() - t0
    checks = [(labels_out, "labels", ["labels.txt", "review.txt"]),
              (raster_out, "raster",
               [f"bev_{f:06}.{e}" for f in range(3) for e in ("mask", "png")]),
              (eval_out, "eval", ["report.txt", "report.kv",
                                  "range_miou.png"])]
    for out_dir, gold_name, names in checks:
        for name in names:
            assert (out_dir / name).read_bytes() == \
                (golden / gold_name / name).read_bytes(), name
    assert elapsed < 10.0, f"pipeline took {elapsed:.1f}s"
