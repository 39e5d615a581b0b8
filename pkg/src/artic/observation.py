"""Synthetic observations: part surface sampling, scene rendering, XYZ I/O.

Rendering places every part with forward kinematics, samples its surface at a
fixed density, pools the points, adds isotropic Gaussian noise and removes
points inside occluder boxes.  All sampling is driven by one seeded generator
so a scene is reproducible from its spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import dq_apply, dq_from_pose, dq_identity
from .model import forward_kinematics

DEFAULT_DENSITY = 500.0  # points per square meter


class ObservationError(ValueError):
    pass


class EmptyObservationError(ObservationError):
    """Scene rendered (or file parsed) to zero points."""


def _allocate_counts(weights, total):
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    weights = np.asarray(weights, dtype=float)
    quota = weights / weights.sum() * total
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _box_cloud(dims, count, rng):
    w, h, d = dims
    areas = np.array([h * d, h * d, w * d, w * d, w * h, w * h])
    counts = _allocate_counts(areas, count)
    pts = []
    half = np.array([w, h, d]) / 2.0
    for face, n in enumerate(counts):
        if n == 0:
            continue
        axis = face // 2  # face order: +x,-x,+y,-y,+z,-z
        sign = 1.0 if face % 2 == 0 else -1.0
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        p = np.empty((n, 3))
        others = [k for k in range(3) if k != axis]
        p[:, axis] = sign * half[axis]
        p[:, others[0]] = uv[:, 0] * half[others[0]]
        p[:, others[1]] = uv[:, 1] * half[others[1]]
        pts.append(p)
    return np.concatenate(pts, axis=0)


def _cylinder_cloud(dims, count, rng):
    r, length = dims
    lateral = 2.0 * np.pi * r * length
    cap = np.pi * r * r
    counts = _allocate_counts([lateral, cap, cap], count)
    pts = []
    if counts[0] > 0:
        theta = rng.uniform(0.0, 2.0 * np.pi, counts[0])
        z = rng.uniform(-length / 2.0, length / 2.0, counts[0])
        pts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta), z]))
    for sign, n in zip((1.0, -1.0), counts[1:]):
        if n == 0:
            continue
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, n))
        pts.append(np.column_stack([
            rad * np.cos(theta), rad * np.sin(theta), np.full(n, sign * length / 2.0),
        ]))
    return np.concatenate(pts, axis=0)


def surface_area(geom):
    if geom.kind == "box":
        w, h, d = geom.dims
        return 2.0 * (w * h + h * d + w * d)
    if geom.kind == "cylinder":
        r, length = geom.dims
        return 2.0 * np.pi * r * length + 2.0 * np.pi * r * r
    return float(len(geom.points)) / max(geom.sample_density, 1e-12)


def sample_part_cloud(geom, rng, density=None):
    """Uniform surface cloud of one part, in the part frame.

    The point count is round(density * area), split across faces by a
    largest-remainder allocation so face coverage tracks face area exactly.
    point_set geometries return their stored points unchanged.
    """
    if geom.kind == "point_set":
        return geom.points.copy()
    density = geom.sample_density if density is None else density
    count = max(int(round(density * surface_area(geom))), 1)
    if geom.kind == "box":
        return _box_cloud(geom.dims, count, rng)
    return _cylinder_cloud(geom.dims, count, rng)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one synthetic observation."""

    joint_config: dict = field(default_factory=dict)
    root_pose: tuple = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
    noise_sigma: float = 0.0
    occluders: tuple = ()  # of (lo, hi) corner pairs
    density: float = DEFAULT_DENSITY
    seed: int = 0

    @staticmethod
    def from_json(doc):
        occluders = tuple(
            (tuple(map(float, box["lo"])), tuple(map(float, box["hi"])))
            for box in doc.get("occluders", ())
        )
        for lo, hi in occluders:
            if any(l > h for l, h in zip(lo, hi)):
                raise ObservationError(f"occluder lo {lo} exceeds hi {hi}")
        root_pose = tuple(map(float, doc.get("root_pose", SceneSpec.root_pose)))
        if len(root_pose) != 7:
            raise ObservationError(
                f"root_pose needs 7 values (x y z qw qx qy qz), got {len(root_pose)}"
            )
        return SceneSpec(
            joint_config={k: float(v) for k, v in doc.get("joint_config", {}).items()},
            root_pose=root_pose,
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            occluders=occluders,
            density=float(doc.get("density", DEFAULT_DENSITY)),
            seed=int(doc.get("seed", 0)),
        )

    def to_json(self):
        return {
            "joint_config": dict(self.joint_config),
            "root_pose": list(self.root_pose),
            "noise_sigma": self.noise_sigma,
            "occluders": [{"lo": list(lo), "hi": list(hi)} for lo, hi in self.occluders],
            "density": self.density,
            "seed": self.seed,
        }


def occlude(points, boxes):
    """Drop points falling inside any axis-aligned box; returns (kept, mask)."""
    points = np.asarray(points, dtype=float)
    mask = np.ones(len(points), dtype=bool)
    for lo, hi in boxes:
        inside = np.all((points >= np.asarray(lo)) & (points <= np.asarray(hi)), axis=1)
        mask &= ~inside
    return points[mask], mask


def render_scene(model, spec):
    """Render a scene to (points, part poses, per-point part labels).

    Poses come from forward kinematics at the spec's joint configuration.
    Raises :class:`EmptyObservationError` when occlusion removes everything.
    """
    rng = np.random.default_rng(spec.seed)
    root = dq_from_pose(np.asarray(spec.root_pose, dtype=float)) if spec.root_pose else dq_identity()
    poses = forward_kinematics(model, spec.joint_config, root_pose=root)
    clouds, labels = [], []
    for pid, geom in model.parts.items():
        local = sample_part_cloud(geom, rng, density=spec.density)
        clouds.append(dq_apply(poses[pid], local))
        labels.append(np.full(len(local), pid, dtype=object))
    points = np.concatenate(clouds, axis=0)
    labels = np.concatenate(labels, axis=0)
    if spec.noise_sigma > 0:
        points = points + rng.normal(0.0, spec.noise_sigma, size=points.shape)
    points, mask = occlude(points, spec.occluders)
    labels = labels[mask]
    if len(points) == 0:
        raise EmptyObservationError("every rendered point was occluded")
    return points, poses, labels


# ---------------------------------------------------------------------------
# XYZ point cloud files: one "x y z" triple per line, '#' starts a comment
# ---------------------------------------------------------------------------

def read_xyz(text):
    points = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ObservationError(f"line {lineno}: expected 3 coordinates, got {len(fields)}")
        try:
            points.append([float(f) for f in fields])
        except ValueError as exc:
            raise ObservationError(f"line {lineno}: {exc}") from exc
    if not points:
        raise EmptyObservationError("no points in cloud file")
    return np.asarray(points, dtype=float)


def write_xyz(points, comment=None):
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.extend("{:.9g} {:.9g} {:.9g}".format(*p) for p in np.asarray(points, dtype=float))
    return "\n".join(lines) + "\n"


def load_xyz(path):
    with open(path) as fh:
        return read_xyz(fh.read())


def save_xyz(path, points, comment=None):
    with open(path, "w") as fh:
        fh.write(write_xyz(points, comment))


def load_scene(path):
    with open(path) as fh:
        return SceneSpec.from_json(json.load(fh))
