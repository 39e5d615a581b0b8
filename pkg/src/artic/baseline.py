"""Whole-object particle filter baseline.

The state packs the root pose as (x, y, z) plus ZYX Euler angles with one
scalar per non-fixed joint, so the cabinet gives the nine dimensional state
(x, y, z, phi, psi, chi, t_a, t_b, t_c).  Weighting renders the entire
object at each hypothesized state; the action model is Gaussian diffusion
with joints clamped to their limits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import dq_apply, dq_from_pose, dq_mul, quat_from_axis_angle, quat_mul, random_quat
from .metrics import model_points
from .potentials import ObservationIndex, UnaryParams, batch_transform, part_template
from .sampling import cloud_bounds, derived_rng, normalize_weights, systematic_resample

_AXES = np.eye(3)


def euler_zyx_to_quat(angles):
    """(..., 3) arrays of (phi, psi, chi) to scalar-first quaternions."""
    angles = np.asarray(angles, dtype=float)
    qz = quat_from_axis_angle(_AXES[2], angles[..., 0])
    qy = quat_from_axis_angle(_AXES[1], angles[..., 1])
    qx = quat_from_axis_angle(_AXES[0], angles[..., 2])
    return quat_mul(quat_mul(qz, qy), qx)


def quat_to_euler_zyx(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., k] for k in range(4))
    phi = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    psi = np.arcsin(np.clip(2.0 * (w * y - z * x), -1.0, 1.0))
    chi = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    return np.stack([phi, psi, chi], axis=-1)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


@dataclass(frozen=True)
class PfParams:
    particles: int = 400
    steps: int = 100
    diffusion_pos: float = 0.01
    diffusion_ori: float = 0.05
    diffusion_joint: Optional[float] = None  # defaults to diffusion_pos
    diffusion_decay: bool = False
    decay_floor: float = 0.02
    unary: UnaryParams = field(default_factory=UnaryParams)
    seed: int = 0
    bbox_pad_frac: float = 0.1

    def joint_sigma(self):
        return self.diffusion_pos if self.diffusion_joint is None else self.diffusion_joint

    def diffusion_scale(self, step):
        if not self.diffusion_decay or self.steps <= 1:
            return 1.0
        frac = (step - 1) / (self.steps - 1)
        return 1.0 + frac * (self.decay_floor - 1.0)


@dataclass
class ParticleSet:
    states: np.ndarray  # (N, 6 + J)
    weights: np.ndarray  # (N,)
    joint_ids: tuple  # child part id per non-fixed joint, model order


def state_dim(model):
    return 6 + len(model.non_fixed_joints())


def states_to_poses(model, states, joint_ids):
    """Forward kinematics for a whole state batch; {part id: (N, 8)}."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    quat = euler_zyx_to_quat(states[:, 3:6])
    root = dq_from_pose(np.concatenate([states[:, :3], quat], axis=1))
    joint_value = dict(zip(joint_ids, states[:, 6:].T))
    poses = {model.root: root}
    remaining = list(model.joints)
    while remaining:
        for j in list(remaining):
            if j.parent not in poses:
                continue
            value = joint_value.get(j.child, np.zeros(len(states)))
            poses[j.child] = dq_mul(poses[j.parent], j.displacement_dq(value))
            remaining.remove(j)
    return poses


def pf_init(model, obs_points, params, rng):
    """Uniform particles over the padded observation bounds.

    Positions are uniform in the padded box, orientations uniform random,
    joint values uniform within their limits; weights start uniform.
    """
    lo, hi = cloud_bounds(obs_points)
    pad = params.bbox_pad_frac * (hi - lo)
    lo, hi = lo - pad, hi + pad
    n = params.particles
    pos = rng.uniform(lo, hi, size=(n, 3))
    euler = quat_to_euler_zyx(random_quat(rng, n))
    joints = model.non_fixed_joints()
    cols = [pos, euler]
    if joints:
        lows = np.array([j.limit_lo for j in joints])
        highs = np.array([j.limit_hi for j in joints])
        cols.append(rng.uniform(lows, highs, size=(n, len(joints))))
    states = np.concatenate(cols, axis=1)
    return ParticleSet(states, np.full(n, 1.0 / n), tuple(j.child for j in joints))


def pf_weight(ps, model, obs, unary_params):
    """Reweight every particle by the likelihood of the full-object render."""
    index = obs if isinstance(obs, ObservationIndex) else ObservationIndex(obs)
    poses = states_to_poses(model, ps.states, ps.joint_ids)
    rendered = []
    for pid, geom in model.parts.items():
        template = part_template(geom, unary_params.template_density(geom))
        rendered.append(batch_transform(poses[pid], template))
    cloud = np.concatenate(rendered, axis=1)  # (N, P_total, 3)
    capped = index.nn_dist(cloud, cap=unary_params.max_assoc_dist)
    weights = np.exp(unary_params.lambda_r * capped.mean(axis=1))
    normalized = normalize_weights(weights)
    degenerate = normalized is None
    if degenerate:
        normalized = np.full(len(ps.states), 1.0 / len(ps.states))
    return ParticleSet(ps.states, normalized, ps.joint_ids), degenerate


def pf_step(ps, model, obs, params, rng, scale=1.0):
    """Resample, diffuse (joints clamped), reset weights, reweight."""
    keep = systematic_resample(ps.weights, len(ps.states), rng)
    states = ps.states[keep].copy()
    sigma_pos = params.diffusion_pos * scale
    sigma_ori = params.diffusion_ori * scale
    sigma_joint = params.joint_sigma() * scale
    if sigma_pos > 0:
        states[:, :3] += rng.normal(0.0, sigma_pos, size=(len(states), 3))
    if sigma_ori > 0:
        states[:, 3:6] = wrap_angle(
            states[:, 3:6] + rng.normal(0.0, sigma_ori, size=(len(states), 3))
        )
    joints = model.non_fixed_joints()
    if joints and sigma_joint > 0:
        states[:, 6:] += rng.normal(0.0, sigma_joint, size=(len(states), len(joints)))
        lows = np.array([j.limit_lo for j in joints])
        highs = np.array([j.limit_hi for j in joints])
        states[:, 6:] = np.clip(states[:, 6:], lows, highs)
    fresh = ParticleSet(states, np.full(len(states), 1.0 / len(states)), ps.joint_ids)
    return pf_weight(fresh, model, obs, params.unary)


@dataclass
class PfResult:
    particles: ParticleSet
    records: list  # one dict per (step, part)
    degenerate_events: int


def weighted_add(ps, model, poses, gt_poses):
    """Weighted mean over particles of each part's displacement error."""
    out = {}
    for pid in model.parts:
        pts = model_points(model.parts[pid])
        moved = batch_transform(poses[pid], pts)  # (N, P, 3)
        target = dq_apply(np.asarray(gt_poses[pid], dtype=float), pts)
        errs = np.linalg.norm(moved - target, axis=-1).mean(axis=1)
        out[pid] = float(np.dot(ps.weights, errs))
    return out


def run_pf(model, obs, params, gt_poses=None):
    """Full filter run; per-step records mirror the message-passing runs."""
    index = obs if isinstance(obs, ObservationIndex) else ObservationIndex(obs)
    rng = derived_rng(params.seed, 0, 2, 0)
    ps = pf_init(model, index.points, params, rng)
    ps, degenerate = pf_weight(ps, model, index, params.unary)
    events = int(degenerate)
    records = []

    def record(step, ps):
        if gt_poses is None:
            return
        poses = states_to_poses(model, ps.states, ps.joint_ids)
        for pid, err in weighted_add(ps, model, poses, gt_poses).items():
            records.append({"iteration": step, "node": pid, "add_m": err})

    record(0, ps)
    for step in range(1, params.steps + 1):
        rng = derived_rng(params.seed, step, 2, 0)
        ps, degenerate = pf_step(ps, model, index, params, rng, params.diffusion_scale(step))
        events += int(degenerate)
        record(step, ps)
    return PfResult(ps, records, events)
