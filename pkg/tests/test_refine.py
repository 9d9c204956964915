import numpy as np
import pytest

from gcf.errors import EmptyRenderAtStart, NoValidVertices
from gcf.field import CorrespondenceField, OraclePredictor, Predictor
from gcf.geometry import Pose, PoseDelta, apply_delta
from gcf.metrics import sample_errors
from gcf.refine import (AdamState, RefinementConfig, adam_step, refine,
                        reprojection_loss)

from conftest import fronto_pose


@pytest.fixture(scope="session")
def cam_100():
    from gcf.geometry import CameraIntrinsics
    return CameraIntrinsics(100.0, (128.0, 128.0), 256, 256)


class TestAdamStep:
    def test_first_step_magnitude(self):
        cfg = RefinementConfig(learning_rate=0.05)
        state, delta = adam_step(AdamState.zero(), np.array([1, 0, 0, 0, 0, 0.0]), cfg)
        assert state.step_count == 1
        mag = abs(delta.omega[0])
        assert 0.049999 <= mag <= 0.05
        assert np.all(delta.omega[1:] == 0) and np.all(delta.dt == 0)

    def test_sign_follows_descent_direction(self):
        # positive input component -> positive step component (the step is
        # taken along the descent direction, not against it)
        cfg = RefinementConfig()
        _, delta = adam_step(AdamState.zero(), np.array([0, 0, 0, 2.0, 0, 0]), cfg)
        assert delta.dt[0] > 0

    def test_zero_gradient_zero_delta(self):
        cfg = RefinementConfig()
        state, delta = adam_step(AdamState.zero(), np.zeros(6), cfg)
        assert np.all(delta.omega == 0) and np.all(delta.dt == 0)
        assert state.step_count == 1

    def test_first_step_scale_invariance(self):
        cfg = RefinementConfig(learning_rate=0.05)
        _, d1 = adam_step(AdamState.zero(), np.array([1.0, 0, 0, 0, 0, 0]), cfg)
        _, d2 = adam_step(AdamState.zero(), np.array([1000.0, 0, 0, 0, 0, 0]), cfg)
        rel = abs(abs(d2.omega[0]) - abs(d1.omega[0])) / abs(d1.omega[0])
        assert rel < 1e-4

    def test_state_persists_moments(self):
        cfg = RefinementConfig()
        g = np.array([1.0, -2, 3, 0.5, 0, 1])
        state, _ = adam_step(AdamState.zero(), g, cfg)
        state, _ = adam_step(state, g, cfg)
        assert state.step_count == 2
        assert np.all(state.v >= 0)


class TestReprojectionLoss:
    def test_zero_at_ground_truth(self, cam_100, cube):
        pose = fronto_pose(2.0)
        assert reprojection_loss(cube, pose, pose, cam_100) == 0.0

    def test_single_vertex_offset(self, cam_100, flat_cube):
        # at z=2, focal=100 a translation of (0.06, 0.08, 0) moves every
        # projection by (3, 4) px; restricted to one vertex: 0.5 * 25
        pose = fronto_pose(2.0)
        gt = Pose(np.eye(3), [0.06, 0.08, 2.0])
        loss = reprojection_loss(flat_cube, pose, gt, cam_100, vertex_subset=[0])
        np.testing.assert_allclose(loss, 12.5, atol=1e-9)

    def test_flattened_cube_x_shift(self, cam_100, flat_cube):
        pose = fronto_pose(2.0)
        gt = Pose(np.eye(3), [0.1, 0.0, 2.0])
        loss = reprojection_loss(flat_cube, pose, gt, cam_100)
        np.testing.assert_allclose(loss, 100.0, atol=1e-9)

    def test_boolean_subset(self, cam_100, flat_cube):
        pose = fronto_pose(2.0)
        gt = Pose(np.eye(3), [0.06, 0.08, 2.0])
        subset = np.zeros(8, dtype=bool)
        subset[0] = True
        np.testing.assert_allclose(
            reprojection_loss(flat_cube, pose, gt, cam_100, subset), 12.5, atol=1e-9)

    def test_all_behind_raises(self, cam_100, cube):
        with pytest.raises(NoValidVertices):
            reprojection_loss(cube, Pose(np.eye(3), [0, 0, -3.0]), fronto_pose(2.0), cam_100)


class TestRefine:
    def test_fixed_point_at_ground_truth(self, cam_100, cube):
        gt = fronto_pose(2.2)
        pred = OraclePredictor(cube, gt, cam_100)
        res = refine(cube, gt, cam_100, pred, cfg=RefinementConfig(iterations=20))
        e = sample_errors(cube, gt, res.final_pose, cam_100)
        assert max(e.e_r, e.e_t, e.e_rt, e.e_p) < 1e-6
        assert res.stopped_at is None

    def test_zero_field_fixed_point_any_iterations(self, cam_100, cube):
        # a predictor that always reports zero displacement leaves the pose
        # bit-identical: Adam of a zero gradient is zero
        class ZeroField(Predictor):
            def predict(self, observation, buffers):
                z = np.zeros(buffers.shape)
                return CorrespondenceField(z, z, buffers.mask.copy())

        start = fronto_pose(2.4)
        res = refine(cube, start, cam_100, ZeroField(), cfg=RefinementConfig(iterations=50))
        assert res.final_pose is start

    def test_deterministic(self, cam_100, cube):
        gt = fronto_pose(2.2)
        init = apply_delta(gt, PoseDelta([0.05, -0.02, 0.03], [0.02, 0.01, -0.05]))
        pred1 = OraclePredictor(cube, gt, cam_100)
        pred2 = OraclePredictor(cube, gt, cam_100)
        cfg = RefinementConfig(iterations=60, record_trace=True)
        r1 = refine(cube, init, cam_100, pred1, cfg=cfg, gt_pose=gt)
        r2 = refine(cube, init, cam_100, pred2, cfg=cfg, gt_pose=gt)
        assert np.array_equal(r1.final_pose.rotation, r2.final_pose.rotation)
        assert np.array_equal(r1.final_pose.translation, r2.final_pose.translation)
        assert [t.loss for t in r1.trace] == [t.loss for t in r2.trace]

    def test_trace_length_and_convergence(self, cam_100, cube):
        gt = fronto_pose(2.2)
        init = apply_delta(gt, PoseDelta([0.06, 0.02, -0.04], [0.03, -0.02, 0.08]))
        pred = OraclePredictor(cube, gt, cam_100)
        cfg = RefinementConfig(iterations=300, record_trace=True)
        res = refine(cube, init, cam_100, pred, cfg=cfg, gt_pose=gt)
        assert len(res.trace) == 301
        assert res.trace[0].iteration == 0
        assert res.trace[-1].iteration == 300
        assert res.trace[-1].loss < 0.01 * res.trace[0].loss

    def test_zero_iterations_noop(self, cam_100, cube):
        gt = fronto_pose(2.2)
        init = apply_delta(gt, PoseDelta([0.05, 0, 0], [0, 0, 0]))
        pred = OraclePredictor(cube, gt, cam_100)
        res = refine(cube, init, cam_100, pred,
                     cfg=RefinementConfig(iterations=0, record_trace=True), gt_pose=gt)
        assert res.final_pose is init
        assert len(res.trace) == 1

    def test_empty_render_at_start(self, cam_100, cube):
        pred = OraclePredictor(cube, fronto_pose(2.0), cam_100)
        with pytest.raises(EmptyRenderAtStart):
            refine(cube, Pose(np.eye(3), [0, 0, -4.0]), cam_100, pred,
                   cfg=RefinementConfig(iterations=5))

    def test_early_stop_reports_iteration(self, cam_100, cube):
        # a hostile predictor drags the object behind the camera
        class Runaway(Predictor):
            def predict(self, observation, buffers):
                z = np.zeros(buffers.shape)
                du = np.where(buffers.mask, 500.0, 0.0)
                return CorrespondenceField(du, z, buffers.mask.copy())

        start = fronto_pose(1.2)
        res = refine(cube, start, cam_100, Runaway(),
                     cfg=RefinementConfig(iterations=400, learning_rate=0.3))
        assert res.stopped_at is not None
        assert 0 < res.stopped_at < 400

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RefinementConfig(iterations=-1)
        with pytest.raises(ValueError):
            RefinementConfig(adam_beta1=1.0)
        with pytest.raises(ValueError):
            RefinementConfig(learning_rate=0.0)
