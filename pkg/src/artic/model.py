"""Kinematic models (parts + articulated joints) and the pairwise MRF graph.

A model is a tree: N parts connected by N-1 joints.  Each joint is prismatic
(translation along an axis), revolute (rotation about an axis) or fixed, with
scalar limits and a fixed origin transform placing the child frame in the
parent frame at zero displacement.  Model files are JSON; see
:func:`parse_model` and the bundled assets for the schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    dq_from_pose,
    dq_from_quat,
    dq_from_translation,
    dq_identity,
    dq_mul,
    quat_from_axis_angle,
)

PRISMATIC = "prismatic"
REVOLUTE = "revolute"
FIXED = "fixed"
JOINT_KINDS = (PRISMATIC, REVOLUTE, FIXED)

IDENTITY_POSE = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)


class ModelError(ValueError):
    """Malformed model document or violated model invariant."""


@dataclass(frozen=True)
class PartGeometry:
    """Surface geometry of one rigid part.

    kind: "box" (dims = w, h, d extents in meters), "cylinder"
    (dims = radius, length) or "point_set" (explicit surface points in the
    part frame; dims unused).
    """

    kind: str
    dims: tuple = ()
    points: Optional[np.ndarray] = None
    sample_density: float = 500.0

    def __post_init__(self):
        if self.kind == "box":
            if len(self.dims) != 3 or min(self.dims) <= 0:
                raise ModelError(f"box needs 3 positive dims, got {self.dims}")
        elif self.kind == "cylinder":
            if len(self.dims) != 2 or min(self.dims) <= 0:
                raise ModelError(f"cylinder needs positive (radius, length), got {self.dims}")
        elif self.kind == "point_set":
            if self.points is None or len(self.points) == 0:
                raise ModelError("point_set geometry needs a non-empty point list")
            object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))
        else:
            raise ModelError(f"unknown geometry kind {self.kind!r}")
        if self.sample_density <= 0:
            raise ModelError("sample_density must be positive")

    def cache_key(self):
        """Stable content key used to derive per-part sampling seeds."""
        if self.kind == "point_set":
            return ("point_set", self.points.shape[0], round(float(self.points.sum()), 9))
        return (self.kind,) + tuple(round(float(d), 9) for d in self.dims)


@dataclass(frozen=True)
class Joint:
    parent: str
    child: str
    kind: str
    axis: tuple = (0.0, 0.0, 1.0)
    limit_lo: float = 0.0
    limit_hi: float = 0.0
    origin: tuple = IDENTITY_POSE

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ModelError(f"unknown joint kind {self.kind!r}")
        if self.parent == self.child:
            raise ModelError(f"self-loop joint at part {self.parent!r}")
        if self.limit_lo > self.limit_hi:
            raise ModelError(
                f"joint {self.parent}->{self.child}: limit_lo {self.limit_lo} > limit_hi {self.limit_hi}"
            )
        if self.kind == FIXED and (self.limit_lo != 0.0 or self.limit_hi != 0.0):
            raise ModelError(f"fixed joint {self.parent}->{self.child} must have limits [0, 0]")
        norm = math.sqrt(sum(a * a for a in self.axis))
        if abs(norm - 1.0) > 1e-9:
            if norm < 1e-12:
                raise ModelError(f"joint {self.parent}->{self.child}: zero axis")
            object.__setattr__(self, "axis", tuple(a / norm for a in self.axis))

    def displacement_dq(self, value):
        """Relative child pose at scalar displacement ``value`` (origin included)."""
        return dq_mul(dq_from_pose(np.asarray(self.origin, dtype=float)), self._motion_dq(value))

    def _motion_dq(self, value):
        value = np.asarray(value, dtype=float)
        if self.kind == PRISMATIC:
            return dq_from_translation(value[..., None] * np.asarray(self.axis))
        if self.kind == REVOLUTE:
            return dq_from_quat(quat_from_axis_angle(np.asarray(self.axis), value))
        out = np.zeros(value.shape + (8,))
        out[..., 0] = 1.0
        return out


@dataclass(frozen=True)
class KinematicModel:
    """Tree of parts; exactly N parts and N-1 joints, ids unique."""

    parts: dict  # part id -> PartGeometry, insertion-ordered
    joints: tuple  # of Joint
    root: str

    def __post_init__(self):
        ids = list(self.parts)
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate part id")
        if self.root not in self.parts:
            raise ModelError(f"root {self.root!r} is not a part")
        if len(self.joints) != len(ids) - 1:
            raise ModelError(
                f"{len(ids)} parts need {len(ids) - 1} joints, got {len(self.joints)}"
            )
        seen = {self.root}
        for j in self.joints:
            for pid in (j.parent, j.child):
                if pid not in self.parts:
                    raise ModelError(f"joint references unknown part {pid!r}")
            if j.child in seen:
                raise ModelError(f"cycle or repeated child at part {j.child!r}")
            seen.add(j.child)
        if seen != set(ids):
            missing = set(ids) - seen
            raise ModelError(f"parts not reachable from root: {sorted(missing)}")

    @property
    def part_ids(self):
        return list(self.parts)

    def joint_to(self, child_id):
        for j in self.joints:
            if j.child == child_id:
                return j
        return None

    def non_fixed_joints(self):
        return [j for j in self.joints if j.kind != FIXED]


@dataclass(frozen=True)
class Edge:
    """MRF edge: one joint, with its articulation limits as relative poses.

    dq_a / dq_b are the relative child-in-parent poses at the lower / upper
    joint limit (origin composed with the limit displacement).
    """

    parent: str
    child: str
    joint: Joint
    dq_a: np.ndarray
    dq_b: np.ndarray

    def other(self, node):
        return self.child if node == self.parent else self.parent


@dataclass(frozen=True)
class MrfGraph:
    """One hidden pose node per part; one edge per joint."""

    model: KinematicModel
    nodes: tuple  # part ids
    edges: tuple  # of Edge
    neighbors: dict = field(default_factory=dict)  # node -> tuple of node ids

    def edge_between(self, a, b):
        for e in self.edges:
            if {e.parent, e.child} == {a, b}:
                return e
        raise KeyError(f"no edge between {a!r} and {b!r}")

    def directed_edges(self):
        """All (sender, receiver) pairs, in a stable order."""
        out = []
        for e in self.edges:
            out.append((e.parent, e.child))
            out.append((e.child, e.parent))
        return out


def limits_as_dq(joint):
    """Relative poses of the child at the two joint limits.

    Fixed joints collapse to (origin, origin).
    """
    if joint.kind == FIXED:
        origin = dq_mul(dq_from_pose(np.asarray(joint.origin, dtype=float)), dq_identity())
        return origin, origin.copy()
    return joint.displacement_dq(joint.limit_lo), joint.displacement_dq(joint.limit_hi)


def build_mrf(model):
    """MRF over part poses: |nodes| = N, |edges| = N-1, limits precomputed."""
    edges = []
    neighbors = {pid: [] for pid in model.parts}
    for j in model.joints:
        dq_a, dq_b = limits_as_dq(j)
        edges.append(Edge(j.parent, j.child, j, dq_a, dq_b))
        neighbors[j.parent].append(j.child)
        neighbors[j.child].append(j.parent)
    return MrfGraph(
        model=model,
        nodes=tuple(model.parts),
        edges=tuple(edges),
        neighbors={k: tuple(v) for k, v in neighbors.items()},
    )


def forward_kinematics(model, joint_config, root_pose=None, lenient=False):
    """Absolute pose of every part for a joint configuration.

    joint_config maps child-part id -> scalar displacement; missing non-fixed
    joints default to limit_lo.  Out-of-limit values raise unless ``lenient``,
    which clamps instead.  Returns {part id: dual quaternion}.
    """
    if root_pose is None:
        root_pose = dq_identity()
    poses = {model.root: np.asarray(root_pose, dtype=float)}
    remaining = list(model.joints)
    while remaining:
        progressed = False
        for j in list(remaining):
            if j.parent not in poses:
                continue
            q = float(joint_config.get(j.child, j.limit_lo)) if j.kind != FIXED else 0.0
            if q < j.limit_lo or q > j.limit_hi:
                if not lenient:
                    raise ValueError(
                        f"joint value {q} for {j.child!r} outside [{j.limit_lo}, {j.limit_hi}]"
                    )
                q = min(max(q, j.limit_lo), j.limit_hi)
            poses[j.child] = dq_mul(poses[j.parent], j.displacement_dq(q))
            remaining.remove(j)
            progressed = True
        if not progressed:  # unreachable for valid models
            raise ModelError("disconnected joint set")
    return poses


# ---------------------------------------------------------------------------
# model file I/O
# ---------------------------------------------------------------------------

def _geometry_from_json(node, where):
    kind = node.get("kind")
    if kind == "box":
        dims = tuple(float(node[k]) for k in ("w", "h", "d"))
        return PartGeometry("box", dims, sample_density=float(node.get("density", 500.0)))
    if kind == "cylinder":
        dims = (float(node["r"]), float(node["l"]))
        return PartGeometry("cylinder", dims, sample_density=float(node.get("density", 500.0)))
    if kind == "point_set":
        return PartGeometry(
            "point_set",
            points=np.asarray(node["points"], dtype=float),
            sample_density=float(node.get("density", 500.0)),
        )
    raise ModelError(f"{where}: unknown geometry kind {kind!r}")


def parse_model(text):
    """Parse a model JSON document into a :class:`KinematicModel`.

    Schema::

        {"root": id,
         "parts": [{"id": str, "geometry": {"kind": "box", "w": ..,
                    "h": .., "d": .., "density": ..}}, ...],
         "joints": [{"parent": id, "child": id, "kind": "prismatic",
                     "axis": [x, y, z], "limits": [lo, hi],
                     "origin": [x, y, z, qw, qx, qy, qz]}, ...]}

    Lengths in meters, angles in radians.  Raises :class:`ModelError` with
    the offending field on any violation (cycles, duplicate ids, bad limits).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    for key in ("root", "parts", "joints"):
        if key not in doc:
            raise ModelError(f"missing top-level key {key!r}")
    parts = {}
    for i, pnode in enumerate(doc["parts"]):
        pid = pnode.get("id")
        if not pid:
            raise ModelError(f"parts[{i}]: missing id")
        if pid in parts:
            raise ModelError(f"parts[{i}]: duplicate id {pid!r}")
        parts[pid] = _geometry_from_json(pnode.get("geometry", {}), f"parts[{i}] ({pid})")
    joints = []
    for i, jnode in enumerate(doc["joints"]):
        where = f"joints[{i}]"
        try:
            joints.append(Joint(
                parent=jnode["parent"],
                child=jnode["child"],
                kind=jnode.get("kind", FIXED),
                axis=tuple(jnode.get("axis", (0.0, 0.0, 1.0))),
                limit_lo=float(jnode.get("limits", (0.0, 0.0))[0]),
                limit_hi=float(jnode.get("limits", (0.0, 0.0))[1]),
                origin=tuple(jnode.get("origin", IDENTITY_POSE)),
            ))
        except KeyError as exc:
            raise ModelError(f"{where}: missing field {exc}") from exc
        except ModelError as exc:
            raise ModelError(f"{where}: {exc}") from exc
    try:
        return KinematicModel(parts=parts, joints=tuple(joints), root=doc["root"])
    except ModelError as exc:
        raise ModelError(str(exc)) from exc


def serialize_model(model):
    """Inverse of :func:`parse_model` (round-trips the model value)."""
    parts = []
    for pid, geom in model.parts.items():
        if geom.kind == "box":
            gnode = {"kind": "box", "w": geom.dims[0], "h": geom.dims[1], "d": geom.dims[2]}
        elif geom.kind == "cylinder":
            gnode = {"kind": "cylinder", "r": geom.dims[0], "l": geom.dims[1]}
        else:
            gnode = {"kind": "point_set", "points": geom.points.tolist()}
        gnode["density"] = geom.sample_density
        parts.append({"id": pid, "geometry": gnode})
    joints = [{
        "parent": j.parent,
        "child": j.child,
        "kind": j.kind,
        "axis": list(j.axis),
        "limits": [j.limit_lo, j.limit_hi],
        "origin": list(j.origin),
    } for j in model.joints]
    return json.dumps({"root": model.root, "parts": parts, "joints": joints}, indent=2)


def load_model(path):
    with open(path) as fh:
        return parse_model(fh.read())
