"""Whole-object particle filter: state packing, weighting, stepping."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from artic.baseline import (
    ParticleSet,
    PfParams,
    euler_zyx_to_quat,
    pf_init,
    pf_step,
    pf_weight,
    quat_to_euler_zyx,
    run_pf,
    state_dim,
    states_to_poses,
    weighted_add,
    wrap_angle,
)
from artic.geometry import dq_from_pose, dq_to_pose
from artic.metrics import add_metric, model_points
from artic.model import Joint, KinematicModel, PRISMATIC, PartGeometry, forward_kinematics
from artic.observation import SceneSpec, render_scene
from artic.potentials import ObservationIndex, UnaryParams, batch_transform, part_template
from artic.sampling import derived_rng


def toy_model():
    parts = {
        "a": PartGeometry("box", (0.1, 0.16, 0.24)),
        "b": PartGeometry("box", (0.06, 0.1, 0.18)),
    }
    joint = Joint("a", "b", PRISMATIC, axis=(1.0, 0, 0), limit_hi=0.3,
                  origin=(0.12, 0.06, 0.09, 1.0, 0.0, 0.0, 0.0))
    return KinematicModel(parts=parts, joints=(joint,), root="a")


class TestEulerAngles:
    def test_matches_scipy_intrinsic_zyx(self):
        rng = np.random.default_rng(0)
        angles = rng.uniform(-np.pi, np.pi, size=(50, 3))
        q = euler_zyx_to_quat(angles)
        expected = Rotation.from_euler("ZYX", angles).as_matrix()
        from artic.geometry import quat_to_matrix

        np.testing.assert_allclose(quat_to_matrix(q), expected, atol=1e-12)

    def test_round_trip_inside_gimbal_domain(self):
        rng = np.random.default_rng(1)
        angles = np.stack([
            rng.uniform(-np.pi, np.pi, 40),
            rng.uniform(-1.4, 1.4, 40),
            rng.uniform(-np.pi, np.pi, 40),
        ], axis=1)
        again = quat_to_euler_zyx(euler_zyx_to_quat(angles))
        np.testing.assert_allclose(again, angles, atol=1e-9)

    def test_wrap_angle_hand_values(self):
        np.testing.assert_allclose(wrap_angle(0.0), 0.0)
        np.testing.assert_allclose(wrap_angle(np.pi), np.pi)
        np.testing.assert_allclose(wrap_angle(-np.pi), np.pi)
        np.testing.assert_allclose(wrap_angle(1.5 * np.pi), -0.5 * np.pi)
        np.testing.assert_allclose(wrap_angle(-2.25 * np.pi), -0.25 * np.pi)


class TestStatePacking:
    def test_state_dim_counts_non_fixed_joints(self):
        assert state_dim(toy_model()) == 7

    def test_states_to_poses_matches_forward_kinematics(self):
        model = toy_model()
        rng = np.random.default_rng(2)
        states = np.concatenate([
            rng.uniform(-0.5, 0.5, size=(10, 3)),
            rng.uniform(-1.0, 1.0, size=(10, 3)),
            rng.uniform(0.0, 0.3, size=(10, 1)),
        ], axis=1)
        poses = states_to_poses(model, states, ("b",))
        for k in range(10):
            root = dq_from_pose(np.concatenate([
                states[k, :3], euler_zyx_to_quat(states[k, 3:6]),
            ]))
            expected = forward_kinematics(model, {"b": states[k, 6]}, root_pose=root)
            for pid in model.parts:
                np.testing.assert_allclose(poses[pid][k], expected[pid], atol=1e-12)


class TestInit:
    def test_bounds_orientations_joints(self):
        model = toy_model()
        obs = np.array([[0.0, 0.0, 0.0], [1.0, 0.5, 0.25]])
        params = PfParams(particles=500, bbox_pad_frac=0.1)
        ps = pf_init(model, obs, params, derived_rng(0, 0, 2, 0))
        assert ps.states.shape == (500, 7)
        assert ps.joint_ids == ("b",)
        lo = np.array([0.0, 0.0, 0.0]) - 0.1 * np.array([1.0, 0.5, 0.25])
        hi = np.array([1.0, 0.5, 0.25]) * 1.1
        assert np.all(ps.states[:, :3] >= lo - 1e-12)
        assert np.all(ps.states[:, :3] <= hi + 1e-12)
        assert np.all(ps.states[:, 6] >= 0.0) and np.all(ps.states[:, 6] <= 0.3)
        np.testing.assert_allclose(ps.weights, 1.0 / 500)


class TestWeighting:
    def test_matches_brute_force_union_render(self):
        model = toy_model()
        cloud, gt, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        rng = np.random.default_rng(4)
        states = np.concatenate([
            rng.uniform(-0.2, 0.2, size=(5, 3)),
            rng.uniform(-0.5, 0.5, size=(5, 3)),
            rng.uniform(0.0, 0.3, size=(5, 1)),
        ], axis=1)
        ps = ParticleSet(states, np.full(5, 0.2), ("b",))
        unary = UnaryParams(lambda_r=-50.0, sample_density=150.0)
        out, degenerate = pf_weight(ps, model, cloud, unary)
        assert not degenerate

        poses = states_to_poses(model, states, ("b",))
        raw = []
        for k in range(5):
            dists = []
            for pid, geom in model.parts.items():
                template = part_template(geom, unary.template_density(geom))
                rendered = batch_transform(poses[pid][k], template)
                d = np.sqrt(((rendered[:, None] - cloud[None]) ** 2).sum(-1)).min(1)
                dists.append(np.minimum(d, unary.max_assoc_dist))
            raw.append(np.exp(unary.lambda_r * np.concatenate(dists).mean()))
        expected = np.asarray(raw) / np.sum(raw)
        np.testing.assert_allclose(out.weights, expected, rtol=1e-9)

    def test_true_state_dominates(self):
        model = toy_model()
        cloud, gt, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        truth = np.array([0.0, 0, 0, 0, 0, 0, 0.2])
        shifted = truth + np.array([0.15, 0, 0, 0, 0, 0, 0])
        twisted = truth + np.array([0, 0, 0, 0.8, 0, 0, 0])
        ps = ParticleSet(np.stack([truth, shifted, twisted]), np.full(3, 1 / 3), ("b",))
        out, _ = pf_weight(ps, model, cloud, UnaryParams(lambda_r=-50.0))
        assert np.argmax(out.weights) == 0
        assert out.weights[0] > 0.6

    def test_degenerate_underflow_falls_back_to_uniform(self):
        model = toy_model()
        obs = np.array([[50.0, 50.0, 50.0]])
        states = np.zeros((4, 7))
        ps = ParticleSet(states, np.full(4, 0.25), ("b",))
        out, degenerate = pf_weight(ps, model, obs, UnaryParams(lambda_r=-1e6))
        assert degenerate
        np.testing.assert_allclose(out.weights, 0.25)


class TestStepping:
    def test_joints_stay_clamped(self):
        model = toy_model()
        cloud, _, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        params = PfParams(particles=100, steps=5, diffusion_pos=0.05,
                          diffusion_joint=0.5, unary=UnaryParams(lambda_r=-50.0))
        rng = derived_rng(0, 0, 2, 0)
        ps = pf_init(model, cloud, params, rng)
        for step in range(3):
            ps, _ = pf_step(ps, model, cloud, params, derived_rng(0, step + 1, 2, 0))
            assert np.all(ps.states[:, 6] >= 0.0)
            assert np.all(ps.states[:, 6] <= 0.3)
            assert ps.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_euler_angles_stay_wrapped(self):
        model = toy_model()
        cloud, _, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        params = PfParams(particles=60, steps=3, diffusion_ori=2.5,
                          unary=UnaryParams(lambda_r=-50.0))
        ps = pf_init(model, cloud, params, derived_rng(1, 0, 2, 0))
        ps, _ = pf_step(ps, model, cloud, params, derived_rng(1, 1, 2, 0))
        assert np.all(ps.states[:, 3:6] > -np.pi - 1e-12)
        assert np.all(ps.states[:, 3:6] <= np.pi + 1e-12)


class TestWeightedAdd:
    def test_hand_mixture(self):
        model = toy_model()
        gt = forward_kinematics(model, {"b": 0.2})
        s1 = np.array([0.0, 0, 0, 0, 0, 0, 0.2])   # exact
        s2 = np.array([0.05, 0, 0, 0, 0, 0, 0.2])  # root shifted 5 cm
        ps = ParticleSet(np.stack([s1, s2]), np.array([0.3, 0.7]), ("b",))
        poses = states_to_poses(model, ps.states, ("b",))
        out = weighted_add(ps, model, poses, gt)
        for pid in model.parts:
            pts = model_points(model.parts[pid])
            e1 = add_metric(poses[pid][0], gt[pid], pts)
            e2 = add_metric(poses[pid][1], gt[pid], pts)
            assert out[pid] == pytest.approx(0.3 * e1 + 0.7 * e2, abs=1e-12)
            assert out[pid] == pytest.approx(0.7 * 0.05, abs=1e-9)


class TestRunPf:
    def test_structure_and_determinism(self):
        model = toy_model()
        cloud, gt, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        params = PfParams(particles=80, steps=4, unary=UnaryParams(lambda_r=-50.0),
                          seed=9)
        r1 = run_pf(model, cloud, params, gt_poses=gt)
        r2 = run_pf(model, cloud, params, gt_poses=gt)
        assert len(r1.records) == 5 * 2
        assert {rec["iteration"] for rec in r1.records} == {0, 1, 2, 3, 4}
        assert all(np.isfinite(rec["add_m"]) for rec in r1.records)
        np.testing.assert_array_equal(r1.particles.states, r2.particles.states)
        assert r1.records == r2.records

    def test_no_ground_truth_no_records(self):
        model = toy_model()
        cloud, _, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        params = PfParams(particles=40, steps=2, unary=UnaryParams(lambda_r=-50.0))
        result = run_pf(model, cloud, params)
        assert result.records == []
        assert result.particles.states.shape == (40, 7)

    def test_error_does_not_explode(self):
        model = toy_model()
        cloud, gt, _ = render_scene(model, SceneSpec(joint_config={"b": 0.2}, seed=3))
        params = PfParams(particles=150, steps=30, diffusion_pos=0.02,
                          diffusion_ori=0.15, diffusion_decay=True, decay_floor=0.05,
                          unary=UnaryParams(lambda_r=-80.0), seed=2)
        result = run_pf(model, cloud, params, gt_poses=gt)
        by_step = {}
        for rec in result.records:
            by_step.setdefault(rec["iteration"], []).append(rec["add_m"])
        initial = np.mean(by_step[0])
        final = np.mean(by_step[30])
        assert final < initial * 1.2
