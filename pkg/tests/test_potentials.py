"""Observation likelihood and articulation kernels.

The pairwise kernel checks follow the collinear construction: displacing the
target along the joint axis by u inside the limits must give exactly 1, and
overshooting by delta must give exp(-(2 delta)^2 / (2 sigma^2)) because both
triangle legs pick up the same overshoot.
"""

import numpy as np
import pytest
from scipy import stats

from artic.geometry import (
    dq_apply,
    dq_conjugate,
    dq_from_pose,
    dq_mul,
    dq_translation,
    random_quat,
)
from artic.model import Joint, PartGeometry, PRISMATIC, REVOLUTE, FIXED, limits_as_dq
from artic.model import Edge
from artic.potentials import (
    DirectedEdge,
    ObservationIndex,
    PairwiseParams,
    UnaryParams,
    batch_transform,
    directed_view,
    pairwise_potential,
    pairwise_sample,
    part_template,
    unary_potential,
)


def make_edge(joint):
    dq_a, dq_b = limits_as_dq(joint)
    return Edge(joint.parent, joint.child, joint, dq_a, dq_b)


def random_pose_dq(rng, n=None):
    count = 1 if n is None else n
    pos = rng.uniform(-1.0, 1.0, size=(count, 3))
    quat = random_quat(rng, count)
    dq = dq_from_pose(np.concatenate([pos, quat], axis=1))
    return dq[0] if n is None else dq


PRISM_X = Joint("a", "b", PRISMATIC, axis=(1.0, 0.0, 0.0), limit_lo=0.0, limit_hi=0.4)


class TestPairwisePrismatic:
    def test_in_range_is_exactly_one(self):
        rng = np.random.default_rng(0)
        params = PairwiseParams(sigma_pos=0.02, sigma_ori=0.1)
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = random_pose_dq(rng, 100)
        u = rng.uniform(0.0, 0.4, 100)
        x_t = dq_mul(x_s, PRISM_X.displacement_dq(u))
        values = pairwise_potential(x_t, x_s, dedge, params)
        np.testing.assert_allclose(values, 1.0, atol=1e-9)

    def test_overshoot_decays_with_doubled_slack(self):
        rng = np.random.default_rng(1)
        params = PairwiseParams(sigma_pos=0.02, sigma_ori=0.1)
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = random_pose_dq(rng, 100)
        delta = rng.uniform(0.001, 0.05, 100)
        over = np.where(rng.uniform(size=100) < 0.5, 0.4 + delta, -delta)
        x_t = dq_mul(x_s, PRISM_X.displacement_dq(over))
        values = pairwise_potential(x_t, x_s, dedge, params)
        expected = np.exp(-((2.0 * delta) ** 2) / (2.0 * params.sigma_pos**2))
        np.testing.assert_allclose(values, expected, atol=1e-6)

    def test_rigid_invariance(self):
        rng = np.random.default_rng(2)
        params = PairwiseParams()
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = random_pose_dq(rng, 100)
        x_t = dq_mul(x_s, PRISM_X.displacement_dq(rng.uniform(-0.1, 0.5, 100)))
        base = pairwise_potential(x_t, x_s, dedge, params)
        g = random_pose_dq(rng, 100)
        moved = pairwise_potential(dq_mul(g, x_t), dq_mul(g, x_s), dedge, params)
        np.testing.assert_allclose(moved, base, atol=1e-9)

    def test_lateral_offset_follows_ellipse_slack(self):
        # level sets are ellipses with foci at the limit poses: a lateral
        # offset r at displacement u costs slack = d(u) + d(0.4 - u) - 0.4
        # with d(v) = sqrt(v^2 + r^2), mild mid-span and steep at the ends
        params = PairwiseParams(sigma_pos=0.02, sigma_ori=0.1)
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = dq_from_pose(np.array([0.0, 0.0, 0.0, 1.0, 0, 0, 0]))
        r = 0.03
        for u in (0.0, 0.2, 0.35):
            x_t = dq_from_pose(np.array([u, r, 0.0, 1.0, 0, 0, 0]))
            slack = np.hypot(u, r) + np.hypot(0.4 - u, r) - 0.4
            expected = np.exp(-(slack**2) / (2 * params.sigma_pos**2))
            got = pairwise_potential(x_t, x_s, dedge, params)
            assert got == pytest.approx(expected, abs=1e-9)
        at_end = pairwise_potential(
            dq_from_pose(np.array([0.0, r, 0.0, 1.0, 0, 0, 0])), x_s, dedge, params)
        mid_span = pairwise_potential(
            dq_from_pose(np.array([0.2, r, 0.0, 1.0, 0, 0, 0])), x_s, dedge, params)
        assert at_end < 0.4 < mid_span

    def test_broadcast_grid_matches_loops(self):
        rng = np.random.default_rng(3)
        params = PairwiseParams()
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = random_pose_dq(rng, 4)
        x_t = random_pose_dq(rng, 5)
        grid = pairwise_potential(x_t[None, :, :], x_s[:, None, :], dedge, params)
        assert grid.shape == (4, 5)
        for i in range(4):
            for j in range(5):
                single = pairwise_potential(x_t[j], x_s[i], dedge, params)
                assert grid[i, j] == pytest.approx(float(single), abs=1e-12)


class TestPairwiseRevolute:
    JOINT = Joint("a", "b", REVOLUTE, axis=(0.0, 0.0, 1.0), limit_lo=-0.5, limit_hi=1.0)

    def test_in_range_rotations_score_one(self):
        rng = np.random.default_rng(4)
        params = PairwiseParams()
        dedge = directed_view(make_edge(self.JOINT), "a")
        x_s = random_pose_dq(rng, 50)
        u = rng.uniform(-0.5, 1.0, 50)
        x_t = dq_mul(x_s, self.JOINT.displacement_dq(u))
        np.testing.assert_allclose(
            pairwise_potential(x_t, x_s, dedge, params), 1.0, atol=1e-9)

    def test_angular_overshoot(self):
        params = PairwiseParams(sigma_pos=0.02, sigma_ori=0.1)
        dedge = directed_view(make_edge(self.JOINT), "a")
        x_s = dq_from_pose(np.array([0.0, 0, 0, 1.0, 0, 0, 0]))
        delta = 0.08
        x_t = dq_mul(x_s, self.JOINT.displacement_dq(1.0 + delta))
        expected = np.exp(-((2 * delta) ** 2) / (2 * params.sigma_ori**2))
        assert pairwise_potential(x_t, x_s, dedge, params) == pytest.approx(expected, abs=1e-9)


class TestDirectedView:
    def test_reverse_conjugates_limits(self):
        edge = make_edge(PRISM_X)
        fwd = directed_view(edge, "a")
        rev = directed_view(edge, "b")
        assert fwd.forward and not rev.forward
        np.testing.assert_allclose(rev.dq_a, dq_conjugate(edge.dq_a), atol=1e-15)
        assert fwd.source == "a" and rev.source == "b" and rev.target == "a"

    def test_non_endpoint_rejected(self):
        with pytest.raises(KeyError):
            directed_view(make_edge(PRISM_X), "zz")

    def test_reverse_direction_scores_valid_configs(self):
        rng = np.random.default_rng(5)
        params = PairwiseParams()
        edge = make_edge(PRISM_X)
        rev = directed_view(edge, "b")
        x_child = random_pose_dq(rng, 50)
        u = rng.uniform(0.0, 0.4, 50)
        x_parent = dq_mul(x_child, dq_conjugate(PRISM_X.displacement_dq(u)))
        values = pairwise_potential(x_parent, x_child, rev, params)
        np.testing.assert_allclose(values, 1.0, atol=1e-9)


class TestPairwiseSample:
    def test_samples_maximize_kernel(self):
        rng = np.random.default_rng(6)
        params = PairwiseParams()
        for source in ("a", "b"):
            dedge = directed_view(make_edge(PRISM_X), source)
            x_s = random_pose_dq(rng, 200)
            x_t = pairwise_sample(x_s, dedge, rng)
            values = pairwise_potential(x_t, x_s, dedge, params)
            np.testing.assert_allclose(values, 1.0, atol=1e-9)

    def test_displacements_uniform_over_limits(self):
        rng = np.random.default_rng(7)
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = dq_from_pose(np.array([0.0, 0, 0, 1.0, 0, 0, 0]))
        samples = pairwise_sample(np.tile(x_s, (3000, 1)), dedge, rng)
        u = dq_translation(samples)[:, 0]
        assert u.min() >= 0.0 and u.max() <= 0.4
        p = stats.kstest(u, stats.uniform(loc=0.0, scale=0.4).cdf).pvalue
        assert p > 0.01

    def test_count_argument_expands_single_pose(self):
        rng = np.random.default_rng(8)
        dedge = directed_view(make_edge(PRISM_X), "a")
        x_s = random_pose_dq(rng)
        out = pairwise_sample(x_s, dedge, rng, count=17)
        assert out.shape == (17, 8)

    def test_fixed_joint_returns_origin_composition(self):
        joint = Joint("a", "b", FIXED, origin=(0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0))
        dedge = directed_view(make_edge(joint), "a")
        rng = np.random.default_rng(9)
        x_s = random_pose_dq(rng, 10)
        out = pairwise_sample(x_s, dedge, rng)
        expected = dq_mul(x_s, dq_from_pose(np.array([0.1, 0, 0, 1.0, 0, 0, 0])))
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestUnary:
    BOX = PartGeometry("box", (0.1, 0.2, 0.3))

    def brute_force_mean_distance(self, pose_dq, obs, params):
        template = part_template(self.BOX, params.template_density(self.BOX))
        rendered = dq_apply(pose_dq, template)
        diffs = rendered[:, None, :] - obs[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=2)).min(axis=1)
        return np.minimum(dist, params.max_assoc_dist).mean()

    def test_matches_brute_force_all_pairs(self):
        rng = np.random.default_rng(10)
        params = UnaryParams(lambda_r=-50.0, sample_density=200.0)
        gt = random_pose_dq(rng)
        obs = dq_apply(gt, part_template(self.BOX, 300.0)) + rng.normal(0, 0.002, (66, 3))
        poses = random_pose_dq(rng, 20)
        got = unary_potential(poses, self.BOX, obs, params)
        for k in range(20):
            expected = np.exp(params.lambda_r * self.brute_force_mean_distance(
                poses[k], obs, params))
            assert got[k] == pytest.approx(expected, rel=1e-12)

    def test_true_pose_outranks_perturbations(self):
        rng = np.random.default_rng(11)
        params = UnaryParams(lambda_r=-50.0, sample_density=300.0)
        gt = random_pose_dq(rng)
        obs = dq_apply(gt, part_template(self.BOX, 400.0))
        offsets = np.array([[0.02, 0, 0], [0, 0.05, 0], [0, 0, 0.1], [0.05, 0.05, 0]])
        candidates = [gt] + [
            dq_mul(dq_from_pose(np.concatenate([off, [1.0, 0, 0, 0]])), gt)
            for off in offsets
        ]
        scores = [float(unary_potential(c, self.BOX, obs, params)) for c in candidates]
        assert np.argmax(scores) == 0

    def test_far_pose_hits_exact_floor(self):
        params = UnaryParams(lambda_r=-50.0, max_assoc_dist=0.1)
        obs = np.zeros((5, 3))
        far = dq_from_pose(np.array([10.0, 0, 0, 1.0, 0, 0, 0]))
        value = unary_potential(far, self.BOX, obs, params)
        assert value == pytest.approx(np.exp(-50.0 * 0.1), rel=1e-12)

    def test_monotone_decay_with_offset(self):
        params = UnaryParams(lambda_r=-50.0, sample_density=300.0)
        obs = part_template(self.BOX, 500.0)
        shifts = [0.0, 0.01, 0.03, 0.06, 0.09]
        scores = [
            float(unary_potential(
                dq_from_pose(np.array([s, 0, 0, 1.0, 0, 0, 0])), self.BOX, obs, params))
            for s in shifts
        ]
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_index_reuse_matches_raw_cloud(self):
        rng = np.random.default_rng(12)
        params = UnaryParams(lambda_r=-50.0)
        obs = rng.uniform(-0.5, 0.5, (200, 3))
        poses = random_pose_dq(rng, 7)
        direct = unary_potential(poses, self.BOX, obs, params)
        via_index = unary_potential(poses, self.BOX, ObservationIndex(obs), params)
        np.testing.assert_array_equal(direct, via_index)


class TestObservationIndex:
    def test_nn_dist_matches_brute_force(self):
        rng = np.random.default_rng(13)
        obs = rng.normal(size=(100, 3))
        queries = rng.normal(size=(40, 3))
        index = ObservationIndex(obs)
        got = index.nn_dist(queries)
        expected = np.sqrt(((queries[:, None] - obs[None]) ** 2).sum(-1)).min(1)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_cap_equals_clipped_distance(self):
        rng = np.random.default_rng(14)
        obs = rng.normal(size=(50, 3))
        queries = rng.normal(scale=3.0, size=(60, 3))
        index = ObservationIndex(obs)
        full = index.nn_dist(queries)
        capped = index.nn_dist(queries, cap=0.5)
        np.testing.assert_allclose(capped, np.minimum(full, 0.5), atol=1e-12)

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            ObservationIndex(np.zeros((0, 3)))

    def test_query_shape_preserved(self):
        obs = np.zeros((4, 3))
        index = ObservationIndex(obs)
        queries = np.ones((2, 5, 3))
        assert index.nn_dist(queries).shape == (2, 5)


class TestBatchTransform:
    def test_matches_dq_apply(self):
        rng = np.random.default_rng(15)
        poses = random_pose_dq(rng, 6)
        pts = rng.normal(size=(11, 3))
        got = batch_transform(poses, pts)
        assert got.shape == (6, 11, 3)
        for i in range(6):
            np.testing.assert_allclose(got[i], dq_apply(poses[i], pts), atol=1e-12)


class TestTemplates:
    def test_cache_returns_same_array(self):
        geom = PartGeometry("box", (0.11, 0.22, 0.33))
        a = part_template(geom, 123.0)
        b = part_template(PartGeometry("box", (0.11, 0.22, 0.33)), 123.0)
        assert a is b

    def test_density_cap_limits_points(self):
        geom = PartGeometry("box", (0.5, 0.5, 0.5))  # area 1.5 m^2
        params = UnaryParams(lambda_r=-50.0, sample_density=1000.0, max_points=120)
        template = part_template(geom, params.template_density(geom))
        assert len(template) <= 121
        small = PartGeometry("box", (0.01, 0.01, 0.01))
        assert params.template_density(small) == 1000.0


class TestParamValidation:
    def test_unary_lambda_sign(self):
        with pytest.raises(ValueError, match="lambda_r"):
            UnaryParams(lambda_r=1.0)

    def test_unary_positive_fields(self):
        with pytest.raises(ValueError):
            UnaryParams(lambda_r=-50.0, max_assoc_dist=0.0)
        with pytest.raises(ValueError):
            UnaryParams(lambda_r=-50.0, max_points=0)

    def test_pairwise_bandwidths_positive(self):
        with pytest.raises(ValueError):
            PairwiseParams(sigma_pos=0.0)
        with pytest.raises(ValueError):
            PairwiseParams(sigma_ori=-1.0)
