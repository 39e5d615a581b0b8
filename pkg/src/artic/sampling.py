"""Shared sampling utilities: resampling, pose priors, stream derivation."""

from __future__ import annotations

import numpy as np

from .geometry import dq_from_pose, random_quat


def derived_rng(seed, *spawn_key):
    """Independent generator for one (iteration, kind, index) work unit.

    Every edge message and node belief update draws from its own stream, so
    results do not depend on scheduling order or thread count.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))


def systematic_resample(weights, count, rng):
    """Indices of ``count`` draws by systematic (low-variance) resampling.

    One uniform offset in [0, 1/count) fixes an evenly spaced comb over the
    cumulative weight profile; multinomial variance collapses to the
    within-cell remainder.
    """
    weights = np.asarray(weights, dtype=float)
    cumulative = np.cumsum(weights)
    cumulative /= cumulative[-1]
    positions = (rng.uniform(0.0, 1.0) + np.arange(count)) / count
    return np.searchsorted(cumulative, positions, side="left")


def normalize_weights(weights):
    """Weights scaled to sum 1; None when the sum is not a positive finite."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0.0:
        return None
    return weights / total


def cloud_bounds(points, pad=0.0):
    points = np.asarray(points, dtype=float)
    return points.min(axis=0) - pad, points.max(axis=0) + pad


def sample_pose_prior(count, lo, hi, rng):
    """Uniform positions over an axis-aligned box with uniform random
    orientations, as (count, 8) dual quaternions."""
    positions = rng.uniform(np.asarray(lo), np.asarray(hi), size=(count, 3))
    quats = random_quat(rng, count)
    poses = np.concatenate([positions, quats], axis=1)
    return dq_from_pose(poses)
