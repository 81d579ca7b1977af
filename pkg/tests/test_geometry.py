import math

import numpy as np
import pytest

from speedtwin.geometry import (
    BehindCamera,
    CameraIntrinsics,
    CameraPose,
    NonPositiveDepth,
    PixelPoint,
    RayParallelToGround,
    backproject_ground,
    crop_map,
    crop_unmap,
    project,
    rotation_from_angles,
)
from speedtwin.scene import REFERENCE_POSE, default_intrinsics, plausible_pose_range


def full_k():
    return default_intrinsics()


def down_pose(h=5.5):
    """Camera at height h looking straight down at the origin."""
    return CameraPose(0.0, h, 0.0, 0.0, -math.pi / 2, 0.0)


def sample_pose(rng):
    r = plausible_pose_range()
    return CameraPose(*(rng.uniform(*r[c]) for c in ("x", "y", "z", "alpha", "beta", "omega")))


class TestRotation:
    def test_zero_angles_is_identity(self):
        assert np.allclose(rotation_from_angles(0, 0, 0), np.eye(3), atol=1e-15)

    def test_orthonormal_examples(self):
        for a, b, o in [(0.5, -0.3, 0.2), (2.0, 1.0, -1.5), (-0.1, 0.7, 3.0)]:
            r = rotation_from_angles(a, b, o)
            assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def test_orthonormal_property_10k(self):
        rng = np.random.default_rng(7)
        angles = rng.uniform(-2 * math.pi, 2 * math.pi, size=(10_000, 3))
        for a, b, o in angles:
            r = rotation_from_angles(a, b, o)
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(r) - 1.0) < 1e-10

    def test_matches_independent_axis_composition(self):
        # independent oracle: build each axis rotation from its definition
        # (yaw positive toward +X, pitch positive up, roll about the axis)
        # and multiply in the documented order.
        a, b, o = 0.3, -0.6, 0.1
        yaw = np.array([
            [math.cos(a), 0.0, -math.sin(a)],
            [0.0, 1.0, 0.0],
            [math.sin(a), 0.0, math.cos(a)],
        ])
        pitch = np.array([
            [1.0, 0.0, 0.0],
            [0.0, math.cos(b), -math.sin(b)],
            [0.0, math.sin(b), math.cos(b)],
        ])
        roll = np.array([
            [math.cos(o), -math.sin(o), 0.0],
            [math.sin(o), math.cos(o), 0.0],
            [0.0, 0.0, 1.0],
        ])
        expected = yaw @ pitch @ roll
        assert np.allclose(rotation_from_angles(a, b, o), expected, atol=1e-15)


class TestProject:
    def test_principal_ray_straight_down(self):
        k = full_k()
        px = project((0.0, 0.0, 0.0), k, down_pose())
        assert px.frame == "sensor"
        assert px.u == pytest.approx(k.cx, abs=1e-9)
        assert px.v == pytest.approx(k.cy, abs=1e-9)

    def test_analytic_pinhole_ratio(self):
        k = CameraIntrinsics(1000, 1000, 500, 400, 1000, 800, 1000, 800)
        px = project((1.0, 0.0, 0.0), k, down_pose(5.5))
        assert px.u - k.cx == pytest.approx(1000 / 5.5, abs=1e-9)
        assert px.v == pytest.approx(k.cy, abs=1e-9)

    def test_reference_pose_sees_loop_origin(self):
        # the documented installation pose must place the loop-corner origin
        # inside the full sensor with the default intrinsics
        k = full_k()
        px = project((0.0, 0.0, 0.0), k, REFERENCE_POSE)
        assert px.in_frame(k)
        # frozen regression values for the documented convention
        assert px.u == pytest.approx(908.4785, abs=0.01)
        assert px.v == pytest.approx(1332.6363, abs=0.01)

    def test_behind_camera_raises(self):
        with pytest.raises(NonPositiveDepth):
            project((0.0, 10.0, 0.0), full_k(), down_pose())  # above the camera

    def test_ray_scale_invariance(self):
        rng = np.random.default_rng(3)
        k = full_k()
        for _ in range(50):
            pose = sample_pose(rng)
            cam = pose.position
            p = np.array([rng.uniform(-5, 12), 0.0, rng.uniform(-20, 8)])
            try:
                base = project(p, k, pose)
            except NonPositiveDepth:
                continue
            lam = rng.uniform(0.2, 4.0)
            scaled = project(cam + lam * (p - cam), k, pose)
            assert scaled.u == pytest.approx(base.u, abs=1e-8)
            assert scaled.v == pytest.approx(base.v, abs=1e-8)


class TestBackproject:
    def test_straight_down_principal_pixel(self):
        k = full_k()
        w = backproject_ground(PixelPoint(k.cx, k.cy, "sensor"), k, down_pose(7.0))
        assert np.allclose(w, [0.0, 0.0, 0.0], atol=1e-12)

    def test_project_backproject_roundtrip_1000(self):
        rng = np.random.default_rng(11)
        k = full_k()
        done = 0
        while done < 1000:
            pose = sample_pose(rng)
            px = PixelPoint(rng.uniform(0, k.sensor_w), rng.uniform(0, k.sensor_h), "sensor")
            try:
                w = backproject_ground(px, k, pose)
            except (RayParallelToGround, BehindCamera):
                continue
            back = project(w, k, pose)
            assert abs(back.u - px.u) < 1e-6 and abs(back.v - px.v) < 1e-6
            done += 1

    def test_ground_point_roundtrip(self):
        rng = np.random.default_rng(13)
        k = full_k()
        done = 0
        while done < 300:
            pose = sample_pose(rng)
            p = np.array([rng.uniform(-5, 12), 0.0, rng.uniform(-25, 10)])
            try:
                px = project(p, k, pose)
                w = backproject_ground(px, k, pose)
            except (NonPositiveDepth, RayParallelToGround, BehindCamera):
                continue
            assert np.abs(w - p).max() < 1e-9
            done += 1

    def test_horizon_and_sky_rays_fail(self):
        k = full_k()
        level = CameraPose(0.0, 5.5, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(RayParallelToGround):
            backproject_ground(PixelPoint(k.cx, k.cy, "sensor"), k, level)
        with pytest.raises(BehindCamera):
            backproject_ground(PixelPoint(k.cx, k.cy - 200, "sensor"), k, level)

    def test_recorded_frame_input_accepted(self):
        k = full_k()
        pose = CameraPose(4.5, 5.5, 19.0, 0.0, -0.52, 0.0)
        sensor_px = project((4.5, 0.0, 2.0), k, pose)
        rec = crop_map(sensor_px, k)
        w = backproject_ground(rec, k, pose)
        assert np.allclose(w, [4.5, 0.0, 2.0], atol=1e-9)


class TestCropMap:
    def test_forced_corner(self):
        k = full_k()
        rec = crop_map(PixelPoint(336.0, 432.0, "sensor"), k)
        assert (rec.u, rec.v) == (0.0, 0.0)
        assert rec.frame == "recorded"

    def test_center_maps_to_center(self):
        k = full_k()
        rec = crop_map(PixelPoint(1296.0, 972.0, "sensor"), k)
        assert (rec.u, rec.v) == (960.0, 540.0)

    def test_roundtrip_exact_on_pixel_indices(self):
        # integer pixel coordinates survive the offset arithmetic exactly
        k = full_k()
        rng = np.random.default_rng(5)
        for _ in range(200):
            px = PixelPoint(float(rng.integers(-100, 2700)),
                            float(rng.integers(-100, 2000)), "sensor")
            back = crop_unmap(crop_map(px, k), k)
            assert back.u == px.u and back.v == px.v

    def test_roundtrip_random_subpixel(self):
        k = full_k()
        rng = np.random.default_rng(6)
        for _ in range(200):
            px = PixelPoint(rng.uniform(-100, 2700), rng.uniform(-100, 2000), "sensor")
            back = crop_unmap(crop_map(px, k), k)
            assert back.u == pytest.approx(px.u, abs=1e-12)
            assert back.v == pytest.approx(px.v, abs=1e-12)

    def test_out_of_frame_is_flagged_not_error(self):
        k = full_k()
        rec = crop_map(PixelPoint(10.0, 10.0, "sensor"), k)
        assert not rec.in_frame(k)

    def test_frame_tag_enforced(self):
        k = full_k()
        with pytest.raises(ValueError):
            crop_map(PixelPoint(0, 0, "recorded"), k)
        with pytest.raises(ValueError):
            crop_unmap(PixelPoint(0, 0, "sensor"), k)


class TestValidation:
    def test_intrinsics_invariants(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(-1, 1, 0, 0, 100, 100, 50, 50)
        with pytest.raises(ValueError):
            CameraIntrinsics(1, 1, 0, 0, 100, 100, 200, 50)

    def test_pose_invariants(self):
        with pytest.raises(ValueError):
            CameraPose(0, -1.0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            CameraPose(0, 5.5, math.nan, 0, 0, 0)

    def test_pixel_frame_tag(self):
        with pytest.raises(ValueError):
            PixelPoint(0, 0, "native")
