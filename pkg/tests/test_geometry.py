import math

import numpy as np
import pytest
from scipy.integrate import quad

from bevmod.errors import PoleSingularity
from bevmod.geometry import (EARTH_RADIUS, MercatorDatum, RigidTransform,
                             apply, box_corners, box_to_cam, compose, invert,
                             oxts_to_pose, rot_z)
from bevmod.ingest import CalibrationSet, OxtsRecord, TrackedBox


def random_transform(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    return RigidTransform(r, rng.normal(scale=5.0, size=3))


class TestSe3:
    def test_compose_identity(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        e = RigidTransform.identity()
        c = compose(e, t)
        assert np.allclose(c.rotation, t.rotation, atol=1e-12)
        assert np.allclose(c.translation, t.translation, atol=1e-12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            t = random_transform(rng)
            p = rng.normal(scale=10.0, size=3)
            assert np.allclose(apply(invert(t), apply(t, p)), p, atol=1e-9)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        t = random_transform(rng)
        c = compose(t, invert(t))
        assert np.allclose(c.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(c.translation, 0, atol=1e-9)

    def test_associativity(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b, c = (random_transform(rng) for _ in range(3))
            p = rng.normal(size=3)
            left = apply(compose(compose(a, b), c), p)
            right = apply(compose(a, compose(b, c)), p)
            assert np.allclose(left, right, atol=1e-9)

    def test_orthonormality_preserved_under_compose(self):
        rng = np.random.default_rng(5)
        t = random_transform(rng)
        for _ in range(200):
            t = compose(t, random_transform(rng))
        r = t.rotation
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9


class TestOxtsToPose:
    def test_reference_record_after_first_frame_subtraction(self):
        datum = MercatorDatum(49.0)
        rec = OxtsRecord(49.0, 8.4, 110.0, 0, 0, 0, 0.0)
        pose = oxts_to_pose(rec, datum)
        rel = compose(invert(pose), pose)
        assert np.allclose(rel.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(rel.translation, 0, atol=1e-9)

    def test_pure_yaw_rotation(self):
        datum = MercatorDatum(0.0)
        rec = OxtsRecord(0.0, 0.0, 0.0, 0.0, 0.0, math.pi / 2, 0.0)
        pose = oxts_to_pose(rec, datum)
        assert np.allclose(pose.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_mercator_northing_against_quadrature(self):
        # independent oracle: y displacement is the integral of the
        # Mercator differential s * er * sec(lat) d(lat)
        lat0, dlat = 49.0, 1e-4
        datum = MercatorDatum(lat0)
        p0 = oxts_to_pose(OxtsRecord(lat0, 8.4, 0, 0, 0, 0, 0), datum)
        p1 = oxts_to_pose(OxtsRecord(lat0 + dlat, 8.4, 0, 0, 0, 0, 0), datum)
        dy = p1.translation[1] - p0.translation[1]
        expected, _ = quad(lambda lat: 1.0 / math.cos(math.radians(lat)),
                           lat0, lat0 + dlat)
        expected *= datum.scale * EARTH_RADIUS * math.pi / 180.0
        assert abs(dy - expected) < 1e-6

    def test_continuity(self):
        datum = MercatorDatum(49.0)
        a = oxts_to_pose(OxtsRecord(49.0, 8.4, 0, 0, 0, 0, 0), datum)
        b = oxts_to_pose(OxtsRecord(49.0 + 1e-9, 8.4 + 1e-9, 0, 0, 0, 0, 0), datum)
        assert np.linalg.norm(a.translation - b.translation) < 1e-2

    def test_pole_singularity(self):
        datum = MercatorDatum(49.0)
        with pytest.raises(PoleSingularity):
            oxts_to_pose(OxtsRecord(90.0, 0, 0, 0, 0, 0, 0), datum)
        with pytest.raises(PoleSingularity):
            MercatorDatum(90.0)


def _identity_calib():
    return CalibrationSet(cam_projection=np.eye(3, 4),
                          rect_rotation=np.eye(3),
                          velo_to_cam=RigidTransform.identity(),
                          imu_to_velo=RigidTransform.identity())


def _kitti_calib(translation=(0.0, 0.0, 0.0)):
    perm = np.array([[0., -1, 0], [0, 0, -1], [1, 0, 0]])
    return CalibrationSet(cam_projection=np.eye(3, 4),
                          rect_rotation=np.eye(3),
                          velo_to_cam=RigidTransform(perm, np.array(translation)),
                          imu_to_velo=RigidTransform.identity())


class TestBoxToCam:
    def test_identity_calibration(self):
        box = TrackedBox(1, "Car", np.array([1.0, 2.0, 3.0]), (4, 2, 1.5), 0.3, 0)
        out = box_to_cam(box, _identity_calib())
        assert np.allclose(out.center, box.center)
        assert out.yaw == -box.yaw  # fixed axis-permutation remap

    def test_standard_permutation_forward(self):
        box = TrackedBox(1, "Car", np.array([10.0, 0.0, 0.0]), (4, 2, 1.5), 0.0, 0)
        out = box_to_cam(box, _kitti_calib())
        assert np.allclose(out.center, [0, 0, 10])

    def test_pure_translation_extrinsic(self):
        box = TrackedBox(1, "Car", np.array([1.0, 2.0, 3.0]), (4, 2, 1.5), 0.0, 0)
        out = box_to_cam(box, _identity_calib())
        shifted = CalibrationSet(cam_projection=np.eye(3, 4),
                                 rect_rotation=np.eye(3),
                                 velo_to_cam=RigidTransform(np.eye(3),
                                                            np.array([0, 0, 0.7])),
                                 imu_to_velo=RigidTransform.identity())
        out2 = box_to_cam(box, shifted)
        assert np.allclose(out2.center - out.center, [0, 0, 0.7])


class TestBoxCorners:
    def test_unit_cube_at_origin(self):
        box = TrackedBox(1, "Car", np.zeros(3), (1, 1, 1), 0.0, 0)
        corners = box_corners(box)
        assert sorted(map(tuple, np.sign(corners) * 0.5)) == \
            sorted(map(tuple, corners))
        assert np.allclose(np.abs(corners), 0.5)

    def test_yaw_quarter_turn_swaps_extents(self):
        box = TrackedBox(1, "Car", np.zeros(3), (4, 2, 1.5), 0.0, 0)
        c0 = box_corners(box)
        box90 = TrackedBox(1, "Car", np.zeros(3), (4, 2, 1.5), math.pi / 2, 0)
        c90 = box_corners(box90)
        assert np.allclose(np.ptp(c0[:, 0]), np.ptp(c90[:, 2]), atol=1e-12)
        assert np.allclose(np.ptp(c0[:, 2]), np.ptp(c90[:, 0]), atol=1e-12)

    def test_pairwise_distances_match_dims(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            dims = tuple(rng.uniform(0.5, 5.0, size=3))
            box = TrackedBox(1, "Car", rng.normal(size=3), dims,
                             rng.uniform(-np.pi, np.pi), 0)
            c = box_corners(box)
            length, width, height = dims
            assert np.isclose(np.linalg.norm(c[1] - c[0]), width)
            assert np.isclose(np.linalg.norm(c[2] - c[1]), length)
            assert np.isclose(np.linalg.norm(c[4] - c[0]), height)
