"""Dual-quaternion algebra for 6-DOF rigid-body poses.

Conventions used throughout the package:

* a quaternion is a length-4 array ``[qw, qx, qy, qz]`` (scalar first),
* a pose is a length-7 array ``[x, y, z, qw, qx, qy, qz]`` (meters + unit
  quaternion),
* a dual quaternion is a length-8 array ``[real | dual]`` where the real
  part encodes rotation and the dual part encodes translation.

A pose is converted to a dual quaternion as ``translate(x,y,z) * rotate(q)``,
i.e. the pure-translation factor ``[1,0,0,0][0, x/2, y/2, z/2]`` multiplied
by the pure-rotation factor ``[q][0,0,0,0]``.  Under this convention
``dq_mul(parent, child_relative)`` composes like the product of the
corresponding homogeneous matrices: points are transformed ``p' = R p + t``.

Every function accepts arrays with leading batch dimensions and broadcasts,
so ``dq_mul(a[:, None], b[None, :])`` yields the full pairwise product grid.
All operations are pure; arrays are never mutated in place.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class DegeneratePoseError(ValueError):
    """Raised when a dual quaternion with (near-)zero real part is normalized."""


class PoseDistance(NamedTuple):
    """Separated positional / angular distance between two rigid poses.

    ``pos`` is the Euclidean distance between the translation components in
    meters; ``ori`` is the relative rotation angle in radians, folded into
    [0, pi] so the quaternion double cover cannot inflate it.
    """

    pos: np.ndarray
    ori: np.ndarray


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    """Hamilton product of two (batches of) quaternions, scalar first."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle):
    """Unit quaternion rotating by ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    w = np.cos(half)
    xyz = axis * np.sin(half)[..., None]
    return np.concatenate([w[..., None], xyz], axis=-1)


def quat_rotate(q, p):
    """Rotate points ``p`` (..., 3) by quaternions ``q`` (..., 4)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    w = q[..., :1]
    v = q[..., 1:]
    # p' = p + 2 w (v x p) + 2 v x (v x p)
    cross1 = np.cross(v, p)
    return p + 2.0 * (w * cross1 + np.cross(v, cross1))


def quat_to_matrix(q):
    """3x3 rotation matrices from unit quaternions."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def canonical_quat(q):
    """Resolve the double cover: flip sign so qw >= 0 (ties: qx, qy, qz >= 0)."""
    q = np.asarray(q, dtype=float)
    sign = np.zeros(q.shape[:-1])
    for k in range(4):
        comp = q[..., k]
        sign = np.where(sign == 0, np.sign(comp), sign)
    sign = np.where(sign == 0, 1.0, sign)
    return q * sign[..., None]


def random_quat(rng, n=None):
    """Quaternions uniform on S^3 (uniform random rotations)."""
    shape = (4,) if n is None else (n, 4)
    q = rng.standard_normal(shape)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    # resample the (measure-zero) near-degenerate draws
    while np.any(norms < 1e-12):
        bad = norms[..., 0] < 1e-12
        q[bad] = rng.standard_normal((int(np.count_nonzero(bad)), 4))
        norms = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / norms


# ---------------------------------------------------------------------------
# dual-quaternion constructors and accessors
# ---------------------------------------------------------------------------

def dq_identity():
    return np.array([1.0, 0, 0, 0, 0, 0, 0, 0])


def dq_from_translation(t):
    """Pure translation: real = identity, dual = [0, x/2, y/2, z/2]."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape[:-1] + (8,))
    out[..., 0] = 1.0
    out[..., 5:8] = 0.5 * t
    return out


def dq_from_quat(q):
    """Pure rotation about the origin."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (8,))
    out[..., :4] = q
    return out


def dq_from_pose(pose):
    """Dual quaternion of a pose ``[x, y, z, qw, qx, qy, qz]``.

    Equals translation(x,y,z) composed with rotation(q); the pose quaternion
    must already be (approximately) unit norm.
    """
    pose = np.asarray(pose, dtype=float)
    if pose.shape[-1] != 7:
        raise ValueError(f"pose must have 7 components, got shape {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ValueError("pose contains non-finite values")
    t = pose[..., :3]
    q = pose[..., 3:7]
    out = np.empty(pose.shape[:-1] + (8,))
    out[..., :4] = q
    # dual = 0.5 * [0, t] * q
    out[..., 4:] = 0.5 * quat_mul(np.concatenate([np.zeros(t.shape[:-1] + (1,)), t], axis=-1), q)
    return out


def dq_to_pose(dq):
    """Inverse of :func:`dq_from_pose` for unit dual quaternions."""
    dq = np.asarray(dq, dtype=float)
    out = np.empty(dq.shape[:-1] + (7,))
    out[..., :3] = dq_translation(dq)
    out[..., 3:] = dq[..., :4]
    return out


def dq_translation(dq):
    """Translation component in meters: t = 2 * dual * conj(real)."""
    dq = np.asarray(dq, dtype=float)
    t_quat = 2.0 * quat_mul(dq[..., 4:], quat_conjugate(dq[..., :4]))
    return t_quat[..., 1:]


def dq_rotation(dq):
    """Rotation component as a quaternion (the real part)."""
    return np.asarray(dq, dtype=float)[..., :4]


def dq_to_matrix(dq):
    """4x4 homogeneous transform matrices for unit dual quaternions."""
    dq = np.asarray(dq, dtype=float)
    mat = np.zeros(dq.shape[:-1] + (4, 4))
    mat[..., :3, :3] = quat_to_matrix(dq[..., :4])
    mat[..., :3, 3] = dq_translation(dq)
    mat[..., 3, 3] = 1.0
    return mat


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def dq_mul(a, b):
    """Dual-quaternion product; composes transforms like a matrix product.

    ``dq_mul(parent, child_relative)`` places the child in the parent frame:
    the result applied to a point equals applying ``b`` first, then ``a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    real = quat_mul(a[..., :4], b[..., :4])
    dual = quat_mul(a[..., :4], b[..., 4:]) + quat_mul(a[..., 4:], b[..., :4])
    return np.concatenate([real, dual], axis=-1)


def dq_conjugate(dq):
    """Classical conjugate (conj of both parts); inverts unit transforms."""
    dq = np.asarray(dq, dtype=float)
    return dq * np.array([1.0, -1, -1, -1, 1, -1, -1, -1])


def dq_apply(dq, points):
    """Transform points (..., 3) by unit dual quaternions (..., 8).

    Leading dimensions broadcast: ``dq_apply(dqs[:, None], pts[None, :])``
    transforms every point by every pose.
    """
    dq = np.asarray(dq, dtype=float)
    return quat_rotate(dq[..., :4], points) + dq_translation(dq)


def dq_normalize(dq):
    """Project onto unit dual quaternions (unit real part, real . dual = 0)."""
    dq = np.asarray(dq, dtype=float)
    real = dq[..., :4]
    dual = dq[..., 4:]
    norm = np.linalg.norm(real, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegeneratePoseError("dual quaternion has (near-)zero real part")
    real = real / norm
    dual = dual / norm
    # remove the component of dual parallel to real so that real . dual = 0
    dot = np.sum(real * dual, axis=-1, keepdims=True)
    dual = dual - dot * real
    return np.concatenate([real, dual], axis=-1)


def dq_distance(a, b) -> PoseDistance:
    """Positional and angular distance between two (batches of) poses.

    pos: Euclidean distance between the translations.
    ori: angle of the relative rotation, in [0, pi]; invariant under the
    quaternion double cover, symmetric, and zero iff the transforms coincide.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = np.linalg.norm(dq_translation(a) - dq_translation(b), axis=-1)
    dot = np.abs(np.sum(a[..., :4] * b[..., :4], axis=-1))
    ori = 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))
    return PoseDistance(pos, ori)
