"""Dense discretized belief propagation on one-dimensional chains.

An independent validation oracle: when every part's pose is determined by a
single scalar (a chain of prismatic joints along one shared axis, root free
along that axis only), exact sum-product over per-node grids is tractable.
The oracle reuses the production unary and pairwise potentials, so it
validates the inference machinery rather than a parallel problem statement.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .geometry import dq_from_translation, dq_mul, dq_translation
from .model import PRISMATIC, forward_kinematics
from .potentials import ObservationIndex, directed_view, pairwise_potential, unary_potential


class ChainOracleError(ValueError):
    """Model outside the oracle's domain (needs a 1-DOF prismatic chain)."""


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    bins: int

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("grid needs at least 2 bins")
        if not self.lo < self.hi:
            raise ValueError(f"grid lo {self.lo} must be below hi {self.hi}")

    @property
    def width(self):
        return (self.hi - self.lo) / self.bins

    def centers(self):
        return self.lo + (np.arange(self.bins) + 0.5) * self.width


def validate_chain(model):
    """Shared axis and zero-configuration poses of an oracle-compatible model.

    Requirements: the joint graph is a path, every joint is prismatic, all
    joint axes coincide, and every joint origin carries no rotation, so each
    part's pose is its zero pose translated along the common axis.
    """
    degrees = {pid: 0 for pid in model.parts}
    axis = None
    for j in model.joints:
        degrees[j.parent] += 1
        degrees[j.child] += 1
        if j.kind != PRISMATIC:
            raise ChainOracleError(f"joint {j.parent}->{j.child} is {j.kind}, not prismatic")
        if axis is None:
            axis = np.asarray(j.axis, dtype=float)
        elif not np.allclose(j.axis, axis, atol=1e-9):
            raise ChainOracleError("oracle requires a single shared joint axis")
        origin_quat = np.asarray(j.origin[3:], dtype=float)
        if not np.allclose(np.abs(origin_quat), [1.0, 0.0, 0.0, 0.0], atol=1e-9):
            raise ChainOracleError("oracle requires rotation-free joint origins")
    if axis is None:
        raise ChainOracleError("oracle requires at least one joint")
    if any(d > 2 for d in degrees.values()):
        raise ChainOracleError("oracle requires a chain (a part has more than 2 joints)")
    zero_poses = forward_kinematics(model, {})
    return axis, zero_poses


def chain_pose(zero_pose, axis, values):
    """Pose at absolute chain coordinate(s) ``values`` along ``axis``."""
    values = np.asarray(values, dtype=float)
    return dq_mul(dq_from_translation(values[..., None] * axis), zero_pose)


def chain_coordinate(poses, zero_pose, axis):
    """Inverse of :func:`chain_pose` for the positional component."""
    delta = dq_translation(np.asarray(poses, dtype=float)) - dq_translation(zero_pose)
    return delta @ axis


@dataclass
class GridBpResult:
    nodes: tuple
    centers: dict  # node -> (B,)
    marginals: dict  # node -> (B,), sums to 1
    means: dict  # node -> posterior mean coordinate
    warnings: list  # strings, e.g. likelihood peaked at a boundary bin


def grid_bp(graph, obs, grids, unary_params, pairwise_params, iterations=None):
    """Exact sum-product marginals over per-node coordinate grids.

    ``grids`` maps node id to :class:`GridSpec`.  Messages follow
    m[t->s](k) = sum_j psi(j, k) phi_t(j) prod_u m[u->t](j) with the same
    directed potential convention as the particle engine.  On a tree the
    marginals are exact once the sweep count reaches the tree diameter;
    ``iterations`` defaults to the node count.
    """
    model = graph.model
    axis, zero_poses = validate_chain(model)
    index = obs if isinstance(obs, ObservationIndex) else ObservationIndex(obs)
    iterations = len(graph.nodes) if iterations is None else iterations

    centers = {n: grids[n].centers() for n in graph.nodes}
    poses = {n: chain_pose(zero_poses[n], axis, centers[n]) for n in graph.nodes}
    unary = {
        n: unary_potential(poses[n], model.parts[n], index, unary_params)
        for n in graph.nodes
    }
    warnings = []
    for n in graph.nodes:
        k_star = int(np.argmax(unary[n]))
        if k_star in (0, grids[n].bins - 1):
            warnings.append(f"{n}: likelihood peaks at boundary bin {k_star}")

    kernels = {}
    for sender, receiver in graph.directed_edges():
        edge = graph.edge_between(sender, receiver)
        dedge = directed_view(edge, sender)
        kernels[(sender, receiver)] = pairwise_potential(
            poses[receiver][None, :, :], poses[sender][:, None, :],
            dedge, pairwise_params,
        )  # (B_sender, B_receiver)

    messages = {
        (s, r): np.full(grids[r].bins, 1.0 / grids[r].bins)
        for s, r in graph.directed_edges()
    }
    for _ in range(iterations):
        fresh = {}
        for sender, receiver in graph.directed_edges():
            pre = unary[sender].copy()
            for u in graph.neighbors[sender]:
                if u != receiver:
                    pre *= messages[(u, sender)]
            msg = kernels[(sender, receiver)].T @ pre
            total = msg.sum()
            fresh[(sender, receiver)] = (
                msg / total if total > 0 else np.full_like(msg, 1.0 / len(msg))
            )
        messages = fresh

    marginals, means = {}, {}
    for n in graph.nodes:
        bel = unary[n].copy()
        for u in graph.neighbors[n]:
            bel *= messages[(u, n)]
        total = bel.sum()
        bel = bel / total if total > 0 else np.full_like(bel, 1.0 / len(bel))
        marginals[n] = bel
        means[n] = float(bel @ centers[n])
    return GridBpResult(graph.nodes, centers, marginals, means, warnings)


def marginals_to_csv(result):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node", "bin_center", "probability"])
    for n in result.nodes:
        for c, p in zip(result.centers[n], result.marginals[n]):
            writer.writerow([n, f"{c:.9g}", f"{p:.12g}"])
    return buf.getvalue()
