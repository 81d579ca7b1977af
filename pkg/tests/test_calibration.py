import math

import numpy as np
import pytest

from speedtwin.calibration import (
    CalibOptions,
    LoopAnnotation,
    StepUnderflow,
    _grad,
    calibrate_pose,
    eq1_loss,
    finite_diff_grad,
    load_annotations,
    save_annotations,
    synthesize_annotation,
)
from speedtwin.geometry import CameraIntrinsics, CameraPose, NonPositiveDepth, crop_map, project
from speedtwin.scene import default_intrinsics, default_scene, plausible_pose_range

K = default_intrinsics()
SCENE = default_scene()
TRUE_POSE = CameraPose(4.5, 5.5, 19.0, 0.05, -0.52, 0.02)


def loop_corners(lane=0):
    return SCENE.loop_world_corners(lane)


def make_annotation(pose=TRUE_POSE, lane=0):
    return synthesize_annotation(loop_corners(lane), K, pose)


def all_annotations(pose=TRUE_POSE):
    return [synthesize_annotation(loop_corners(i), K, pose) for i in range(3)]


def sample_pose(rng):
    r = plausible_pose_range()
    return CameraPose(*(rng.uniform(*r[c]) for c in ("x", "y", "z", "alpha", "beta", "omega")))


class TestEq1Loss:
    def test_self_consistent_annotation_is_zero(self):
        assert eq1_loss(TRUE_POSE, K, make_annotation()) == pytest.approx(0.0, abs=1e-9)

    def test_rigid_3_4_shift_gives_20(self):
        ann = make_annotation()
        shifted = LoopAnnotation(ann.world_corners, ann.pixel_corners + (3.0, 4.0))
        assert eq1_loss(TRUE_POSE, K, shifted) == pytest.approx(20.0, abs=1e-9)

    def test_single_corner_move_matches_direct_formula(self):
        # straight-down camera over the origin, no crop offset: world (X, 0, Z)
        # lands at pixel (10X, 10Z), so the world rectangle below projects to
        # (0,0), (10,0), (10,5), (0,5) exactly.
        k = CameraIntrinsics(100.0, 100.0, 0.0, 0.0, 200, 200, 200, 200)
        pose = CameraPose(0.0, 10.0, 0.0, 0.0, -math.pi / 2, 0.0)
        world = np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0.5], [0, 0, 0.5]], dtype=float)
        ann = LoopAnnotation(world, np.array([[0, 1], [10, 0], [10, 5], [0, 5]], dtype=float))
        # direct evaluation of the cost: one corner off by 1 px, and the two
        # perimeter edges touching it change length
        expected = 1.0 + abs(math.sqrt(101.0) - 10.0) + abs(4.0 - 5.0)
        assert eq1_loss(pose, k, ann) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(2.0499, abs=1e-3)

    def test_loss_nonnegative_random(self):
        rng = np.random.default_rng(2)
        ann = make_annotation()
        for _ in range(50):
            noisy = LoopAnnotation(ann.world_corners,
                                   ann.pixel_corners + rng.normal(0, 20, size=(4, 2)))
            assert eq1_loss(TRUE_POSE, K, noisy) >= 0.0

    def test_rigid_translation_changes_only_corner_term(self):
        # corner term computed independently through the public projection API
        rng = np.random.default_rng(4)
        ann = make_annotation()
        noisy_px = ann.pixel_corners + rng.normal(0, 5, size=(4, 2))
        shift = np.array([7.0, -2.0])
        proj = np.array([
            [crop_map(project(c, K, TRUE_POSE), K).u, crop_map(project(c, K, TRUE_POSE), K).v]
            for c in ann.world_corners
        ])
        corner = np.linalg.norm(proj - noisy_px, axis=1).sum()
        corner_shifted = np.linalg.norm(proj - (noisy_px + shift), axis=1).sum()
        loss = eq1_loss(TRUE_POSE, K, LoopAnnotation(ann.world_corners, noisy_px))
        loss_shifted = eq1_loss(TRUE_POSE, K, LoopAnnotation(ann.world_corners, noisy_px + shift))
        assert (loss_shifted - loss) == pytest.approx(corner_shifted - corner, abs=1e-12 * max(1.0, loss))

    def test_behind_camera_raises(self):
        looking_away = CameraPose(4.5, 5.5, 19.0, math.pi, -0.52, 0.0)  # yawed 180
        with pytest.raises(NonPositiveDepth):
            eq1_loss(looking_away, K, make_annotation())


class TestFiniteDiffGrad:
    def test_near_zero_at_generating_pose(self):
        # central differences straddle the cost's minimum symmetrically, so
        # the residual is the O(h * curvature) term
        from speedtwin.scene import desk_intrinsics
        kd = desk_intrinsics()
        ann = synthesize_annotation(loop_corners(0), kd, TRUE_POSE)
        g = finite_diff_grad(TRUE_POSE, kd, ann, h=1e-6)
        assert np.abs(g).max() < 1e-3

    def test_quadratic_surrogate_gradient(self):
        surrogate = lambda p, idx=None: float((p ** 2).sum())
        p = np.array([0.3, -1.2, 2.0, 0.5, -0.7, 1.1])
        g = _grad(surrogate, p, np.full(6, 1e-6), np.ones(6, dtype=bool))
        assert np.abs(g - 2 * p).max() < 1e-6

    def test_halving_h_converges_quadratically(self):
        pose = CameraPose(4.9, 5.5, 18.6, 0.08, -0.49, 0.01)  # smooth region
        ann = make_annotation()
        ref = finite_diff_grad(pose, K, ann, h=1e-6)
        err1 = np.abs(finite_diff_grad(pose, K, ann, h=1e-3) - ref)
        err2 = np.abs(finite_diff_grad(pose, K, ann, h=5e-4) - ref)
        sig = err1 > 1e-4  # components where the h^2 term dominates noise
        assert sig.any()
        assert np.all(err2[sig] < err1[sig] / 2.5)

    def test_nonpositive_step_rejected(self):
        with pytest.raises(StepUnderflow):
            finite_diff_grad(TRUE_POSE, K, make_annotation(), h=0.0)


class TestCalibratePose:
    def test_already_optimal_init(self):
        res = calibrate_pose(TRUE_POSE, K, all_annotations(),
                             CalibOptions(restarts=1, rng_seed=0))
        assert res.converged
        assert res.final_loss < 1e-6
        assert np.allclose(res.pose.as_array(), TRUE_POSE.as_array(), atol=1e-9)

    def test_roundtrip_recovery_from_perturbed_init(self):
        rng = np.random.default_rng(21)
        gt = TRUE_POSE
        anns = all_annotations(gt)
        init = CameraPose(gt.x + rng.uniform(-1, 1), gt.y, gt.z + rng.uniform(-1, 1),
                          gt.alpha + math.radians(rng.uniform(-3, 3)),
                          gt.beta + math.radians(rng.uniform(-3, 3)),
                          gt.omega + math.radians(rng.uniform(-3, 3)))
        res = calibrate_pose(init, K, anns, CalibOptions(restarts=1, rng_seed=1))
        assert res.final_loss < 1e-3
        err = np.abs(res.pose.as_array() - gt.as_array())
        assert err[[0, 1, 2]].max() < 0.01
        assert err[[3, 4, 5]].max() < math.radians(0.1)

    def test_fixed_components_never_move(self):
        init = CameraPose(3.8, 5.5, 19.5, 0.0, -0.5, 0.0)
        res = calibrate_pose(init, K, all_annotations(),
                             CalibOptions(restarts=4, rng_seed=3,
                                          fixed_components=("y", "omega")))
        assert res.pose.y == init.y
        assert res.pose.omega == init.omega

    def test_trace_non_increasing(self):
        init = CameraPose(3.8, 5.5, 19.5, 0.0, -0.45, 0.0)
        res = calibrate_pose(init, K, all_annotations(), CalibOptions(restarts=1, rng_seed=5))
        assert np.all(np.diff(res.loss_trace) <= 0)
        assert res.final_loss <= res.loss_trace[0]

    def test_deterministic_given_seed(self):
        init = CameraPose(3.8, 5.5, 19.5, 0.0, -0.45, 0.0)
        opts = CalibOptions(restarts=4, rng_seed=9)
        r1 = calibrate_pose(init, K, all_annotations(), opts)
        r2 = calibrate_pose(init, K, all_annotations(), opts)
        assert np.array_equal(r1.pose.as_array(), r2.pose.as_array())
        assert np.array_equal(r1.loss_trace, r2.loss_trace)
        assert r1.restart_index == r2.restart_index

    def test_non_convergence_is_flagged_not_raised(self):
        init = CameraPose(2.0, 5.5, 23.0, 0.2, -0.3, 0.1)
        res = calibrate_pose(init, K, all_annotations(),
                             CalibOptions(restarts=1, max_iters=1, rng_seed=0,
                                          refine=False))
        assert not res.converged
        assert res.final_loss == res.loss_trace[-1]

    def test_recovery_smoke_over_random_poses(self):
        # small-sample version of the full acceptance round trip
        rng = np.random.default_rng(33)
        ok = 0
        for _ in range(10):
            gt = sample_pose(rng)
            try:
                anns = [synthesize_annotation(loop_corners(i), K, gt) for i in range(3)]
            except NonPositiveDepth:
                continue
            init = CameraPose(gt.x + rng.uniform(-1, 1), gt.y, gt.z + rng.uniform(-1, 1),
                              gt.alpha + math.radians(rng.uniform(-3, 3)),
                              gt.beta + math.radians(rng.uniform(-3, 3)),
                              gt.omega + math.radians(rng.uniform(-3, 3)))
            res = calibrate_pose(init, K, anns, CalibOptions(restarts=1, rng_seed=0))
            err = np.abs(res.pose.as_array() - gt.as_array())
            if res.final_loss < 1e-3 and err[:3].max() < 0.01 and err[3:].max() < math.radians(0.1):
                ok += 1
        assert ok >= 8


class TestAnnotationIO:
    def test_roundtrip_file(self, tmp_path):
        anns = all_annotations()
        path = tmp_path / "loops.json"
        save_annotations(anns, path)
        loaded = load_annotations(path)
        assert len(loaded) == 3
        for a, b in zip(anns, loaded):
            assert np.allclose(a.world_corners, b.world_corners)
            assert np.allclose(a.pixel_corners, b.pixel_corners)

    def test_annotation_validation(self):
        good = loop_corners()
        with pytest.raises(ValueError):
            LoopAnnotation(good[:3], np.zeros((4, 2)))
        with pytest.raises(ValueError):
            LoopAnnotation(good + np.array([0.0, 0.5, 0.0]), np.zeros((4, 2)))
        skewed = good.copy()
        skewed[2, 0] += 1.0
        with pytest.raises(ValueError):
            LoopAnnotation(skewed, np.zeros((4, 2)))
