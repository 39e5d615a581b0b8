"""Resampling, weight normalization, and the pose prior."""

import numpy as np
import pytest

from artic.geometry import dq_rotation, dq_translation
from artic.sampling import (
    cloud_bounds,
    derived_rng,
    normalize_weights,
    sample_pose_prior,
    systematic_resample,
)


class TestDerivedRng:
    def test_same_key_same_stream(self):
        a = derived_rng(7, 3, 0, 5).standard_normal(4)
        b = derived_rng(7, 3, 0, 5).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_diverge(self):
        a = derived_rng(7, 3, 0, 5).standard_normal(4)
        b = derived_rng(7, 3, 0, 6).standard_normal(4)
        c = derived_rng(8, 3, 0, 5).standard_normal(4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestSystematicResample:
    def test_counts_match_weights_exactly(self):
        # with n*w_i integral each index appears exactly n*w_i times,
        # whatever the uniform offset happens to be
        weights = np.array([0.5, 0.25, 0.25])
        for seed in range(10):
            idx = systematic_resample(weights, 8, np.random.default_rng(seed))
            counts = np.bincount(idx, minlength=3)
            assert counts.tolist() == [4, 2, 2]

    def test_degenerate_weight_wins_everything(self):
        weights = np.array([0.0, 1.0, 0.0])
        idx = systematic_resample(weights, 16, np.random.default_rng(1))
        assert np.all(idx == 1)

    def test_unnormalized_weights_accepted(self):
        idx_raw = systematic_resample(np.array([2.0, 1.0, 1.0]), 100,
                                      np.random.default_rng(5))
        idx_norm = systematic_resample(np.array([0.5, 0.25, 0.25]), 100,
                                       np.random.default_rng(5))
        np.testing.assert_array_equal(idx_raw, idx_norm)

    def test_large_sample_frequencies(self):
        rng = np.random.default_rng(9)
        weights = rng.uniform(0.0, 1.0, 20)
        weights /= weights.sum()
        idx = systematic_resample(weights, 100000, rng)
        freq = np.bincount(idx, minlength=20) / 100000.0
        # systematic resampling keeps every count within 1 of n*w
        np.testing.assert_allclose(freq, weights, atol=2e-5)

    def test_indices_in_range(self):
        idx = systematic_resample(np.ones(7), 50, np.random.default_rng(2))
        assert idx.min() >= 0 and idx.max() < 7


class TestNormalizeWeights:
    def test_scales_to_unit_sum(self):
        w = normalize_weights([1.0, 3.0])
        np.testing.assert_allclose(w, [0.25, 0.75])

    def test_zero_sum_returns_none(self):
        assert normalize_weights(np.zeros(4)) is None

    def test_nan_or_inf_returns_none(self):
        assert normalize_weights([1.0, np.nan]) is None
        assert normalize_weights([1.0, np.inf]) is None


class TestPrior:
    def test_cloud_bounds_with_pad(self):
        pts = np.array([[0.0, 1.0, -1.0], [2.0, 3.0, 0.0]])
        lo, hi = cloud_bounds(pts, pad=0.5)
        np.testing.assert_allclose(lo, [-0.5, 0.5, -1.5])
        np.testing.assert_allclose(hi, [2.5, 3.5, 0.5])

    def test_positions_uniform_in_box(self):
        rng = np.random.default_rng(3)
        lo, hi = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 4.0, 3.0])
        dq = sample_pose_prior(20000, lo, hi, rng)
        pos = dq_translation(dq)
        assert np.all(pos >= lo) and np.all(pos <= hi)
        np.testing.assert_allclose(pos.mean(axis=0), (lo + hi) / 2, atol=0.03)
        expected_var = (hi - lo) ** 2 / 12.0
        np.testing.assert_allclose(pos.var(axis=0), expected_var, rtol=0.05)

    def test_orientations_cover_the_sphere(self):
        rng = np.random.default_rng(4)
        dq = sample_pose_prior(20000, [0, 0, 0], [1, 1, 1], rng)
        quats = dq_rotation(dq)
        np.testing.assert_allclose(np.linalg.norm(quats, axis=1), 1.0, atol=1e-9)
        # mean of q q^T over uniform rotations is I/4
        outer = np.einsum("ni,nj->ij", quats, quats) / len(quats)
        np.testing.assert_allclose(outer, np.eye(4) / 4.0, atol=0.01)

    def test_pose_prior_shape(self):
        dq = sample_pose_prior(5, [0, 0, 0], [1, 1, 1], np.random.default_rng(0))
        assert dq.shape == (5, 8)
