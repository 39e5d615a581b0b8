"""Pull message-passing belief propagation with particle messages.

Each message from node t to node s carries M weighted pose samples.  The
pull rule draws those samples from the receiver's previous belief, then
weights each sample on the sender's side: by the observation likelihood of a
pose hypothesis for t sampled through the articulation constraint, and by
kernel-weighted agreement with the messages that arrived at t one iteration
earlier.  Beliefs pool incoming messages, reweight by the node's own
likelihood, resample and diffuse.  All randomness comes from per-edge and
per-node streams derived from (seed, iteration, kind, index), so results do
not depend on update order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import (
    canonical_quat,
    dq_from_pose,
    dq_to_pose,
    quat_from_axis_angle,
    quat_mul,
)
from .metrics import add_metric, model_points
from .model import FIXED, forward_kinematics
from .potentials import (
    ObservationIndex,
    PairwiseParams,
    UnaryParams,
    directed_view,
    pairwise_potential,
    pairwise_sample,
    unary_potential,
)
from .sampling import (
    cloud_bounds,
    derived_rng,
    normalize_weights,
    sample_pose_prior,
    systematic_resample,
)


class DegenerateMessageError(RuntimeError):
    """Every candidate weight vanished; carries the sampled poses."""

    def __init__(self, sender, receiver, poses):
        super().__init__(f"all-zero message weights on {sender}->{receiver}")
        self.sender = sender
        self.receiver = receiver
        self.poses = poses


class DegenerateBeliefError(RuntimeError):
    def __init__(self, node):
        super().__init__(f"all-zero pooled belief weights at {node}")
        self.node = node


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    poses: np.ndarray  # (M, 8)
    weights: np.ndarray  # (M,), sums to 1


@dataclass(frozen=True)
class Belief:
    node: str
    poses: np.ndarray  # (T, 8)
    weights: Optional[np.ndarray] = None  # pooled pre-resampling diagnostics
    estimate: Optional[np.ndarray] = None  # best-likelihood pooled sample


@dataclass(frozen=True)
class BeliefStats:
    mean_pos: np.ndarray
    std_pos: np.ndarray
    mean_quat: np.ndarray
    mean_ori: float  # mean geodesic deviation from the mean orientation
    std_ori: float
    certain: bool


@dataclass(frozen=True)
class PriorSpec:
    """Initial belief distribution.

    ``uniform`` scatters poses over the padded cloud bounding box with
    random orientations.  ``kinematic`` draws joint configurations uniformly
    within their limits and roots them at a coarse pose estimate perturbed
    by Gaussian noise, so initial hypotheses start on the articulation
    manifold (belief init "informed by a prior distribution").
    """

    kind: str = "uniform"
    root_pose: tuple = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
    root_sigma_pos: float = 0.05
    root_sigma_ori: float = 0.3  # radians

    def __post_init__(self):
        if self.kind not in ("uniform", "kinematic"):
            raise ValueError(
                f"prior kind must be 'uniform' or 'kinematic', got {self.kind!r}")
        pose = tuple(float(v) for v in self.root_pose)
        if len(pose) != 7:
            raise ValueError(
                f"prior root_pose needs 7 values (x y z qw qx qy qz), got {len(pose)}")
        object.__setattr__(self, "root_pose", pose)
        if self.root_sigma_pos < 0 or self.root_sigma_ori < 0:
            raise ValueError("prior sigmas must be >= 0")


@dataclass(frozen=True)
class InferenceParams:
    M: int = 400
    iterations: int = 100
    diffusion_pos: float = 0.01
    diffusion_ori: float = 0.05
    diffusion_decay: bool = False
    decay_floor: float = 0.02
    unary: UnaryParams = field(default_factory=UnaryParams)
    pairwise: PairwiseParams = field(default_factory=PairwiseParams)
    seed: int = 0
    prior: PriorSpec = field(default_factory=PriorSpec)
    prior_bounds: Optional[tuple] = None  # ((lo x,y,z), (hi x,y,z))
    prior_poses: Optional[object] = None  # explicit pools, (K, 8) or {node: (K, 8)}
    bbox_pad_frac: float = 0.1
    snapshot_every: int = 0

    def __post_init__(self):
        if self.M < 1 or self.iterations < 1:
            raise ValueError("M and iterations must be >= 1")
        if self.diffusion_pos < 0 or self.diffusion_ori < 0:
            raise ValueError("diffusion magnitudes must be >= 0")

    def diffusion_scale(self, iteration):
        """Linear decay from 1 at iteration 1 to decay_floor at the last."""
        if not self.diffusion_decay or self.iterations <= 1:
            return 1.0
        frac = (iteration - 1) / (self.iterations - 1)
        return 1.0 + frac * (self.decay_floor - 1.0)


def message_update(graph, sender, receiver, belief_prev, msgs_into_sender, obs, params, rng):
    """One pull message update for the directed edge sender -> receiver.

    Draws M poses uniformly from the receiver's previous belief, scores each
    by the sender-side unary of a constraint-sampled hypothesis times the
    kernel-weighted mass of every other message that reached the sender, and
    normalizes.  Raises :class:`DegenerateMessageError` when all weights
    vanish; the caller falls back to uniform weights.
    """
    edge = graph.edge_between(sender, receiver)
    idx = rng.integers(0, len(belief_prev.poses), size=params.M)
    mu = belief_prev.poses[idx]

    hypotheses = pairwise_sample(mu, directed_view(edge, receiver), rng)
    part = graph.model.parts[sender]
    w_unary = unary_potential(hypotheses, part, obs, params.unary)

    w_neigh = np.ones(params.M)
    toward_receiver = directed_view(edge, sender)
    for msg in msgs_into_sender:
        if msg.sender == receiver:
            continue
        kernel = pairwise_potential(
            mu[:, None, :], msg.poses[None, :, :], toward_receiver, params.pairwise,
        )
        w_neigh *= kernel @ msg.weights

    weights = normalize_weights(w_neigh * w_unary)
    if weights is None:
        raise DegenerateMessageError(sender, receiver, mu)
    return Message(sender, receiver, mu, weights)


def _diffuse(poses, diffusion_pos, diffusion_ori, rng):
    pose7 = dq_to_pose(poses)
    pos = pose7[:, :3]
    quat = pose7[:, 3:]
    if diffusion_pos > 0:
        pos = pos + rng.normal(0.0, diffusion_pos, size=pos.shape)
    if diffusion_ori > 0:
        axis = rng.normal(size=pos.shape)
        axis /= np.maximum(np.linalg.norm(axis, axis=1, keepdims=True), 1e-12)
        angle = rng.normal(0.0, diffusion_ori, size=len(pos))
        quat = quat_mul(quat_from_axis_angle(axis, angle), quat)
    return dq_from_pose(np.concatenate([pos, quat], axis=1))


def belief_update(node, msgs_in, part, obs, params, rng, diffusion_scale=1.0):
    """Pool incoming messages into a new belief for ``node``.

    Each message sample is reweighted by the node's own observation
    likelihood and messages are normalized individually, so every neighbor
    contributes equal mass to the pooled set of T = sum(M) samples.  The pool
    is systematic-resampled back to T poses and diffused with Gaussian noise
    on position and a random-axis rotation angle on orientation.
    """
    pools, pool_weights, pool_unary = [], [], []
    for msg in msgs_in:
        unary = unary_potential(msg.poses, part, obs, params.unary)
        w = normalize_weights(msg.weights * unary)
        if w is None:
            w = np.zeros(len(msg.poses))
        pools.append(msg.poses)
        pool_weights.append(w)
        pool_unary.append(unary)
    poses = np.concatenate(pools, axis=0)
    weights = normalize_weights(np.concatenate(pool_weights))
    if weights is None:
        raise DegenerateBeliefError(node)
    estimate = poses[int(np.argmax(np.concatenate(pool_unary)))]
    keep = systematic_resample(weights, len(poses), rng)
    diffused = _diffuse(
        poses[keep],
        params.diffusion_pos * diffusion_scale,
        params.diffusion_ori * diffusion_scale,
        rng,
    )
    return Belief(node, diffused, weights, estimate)


def mle_estimate(belief, part, obs, params):
    """Belief sample with the highest re-evaluated observation likelihood."""
    scores = unary_potential(belief.poses, part, obs, params.unary)
    return belief.poses[int(np.argmax(scores))]


def belief_stats(belief, threshold=0.0025):
    """Per-dimension position spread and geodesic orientation spread.

    Position stds use the population convention.  The mean orientation is
    the principal eigenvector of the outer-product matrix of sign-aligned
    quaternions; ori stats are the first two moments of geodesic angles to
    it.  ``certain`` requires every positional std below ``threshold``.
    """
    pose7 = dq_to_pose(belief.poses)
    pos = pose7[:, :3]
    quats = canonical_quat(pose7[:, 3:])
    accum = quats.T @ quats
    eigvals, eigvecs = np.linalg.eigh(accum)
    mean_quat = canonical_quat(eigvecs[:, -1])
    angles = 2.0 * np.arccos(np.clip(np.abs(quats @ mean_quat), -1.0, 1.0))
    std_pos = pos.std(axis=0)
    return BeliefStats(
        mean_pos=pos.mean(axis=0),
        std_pos=std_pos,
        mean_quat=mean_quat,
        mean_ori=float(angles.mean()),
        std_ori=float(angles.std()),
        certain=bool(np.all(std_pos < threshold)),
    )


@dataclass
class InferenceResult:
    beliefs: dict  # node -> Belief, final iteration
    estimates: dict  # node -> (8,) pose, final iteration
    records: list  # one dict per (iteration, node)
    snapshots: dict  # iteration -> {node: poses}, when requested
    degenerate_events: int


def _kinematic_pools(model, prior, count, rng):
    """Per-node pose pools from ``count`` forward-kinematics samples."""
    base = np.asarray(prior.root_pose, dtype=float)
    movable = [j for j in model.joints if j.kind != FIXED]
    pools = {node: np.empty((count, 8)) for node in model.parts}
    for k in range(count):
        jc = {j.child: float(rng.uniform(j.limit_lo, j.limit_hi)) for j in movable}
        axis = rng.normal(size=3)
        norm = np.linalg.norm(axis)
        axis = axis / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
        angle = rng.normal(0.0, prior.root_sigma_ori)
        quat = quat_mul(quat_from_axis_angle(axis, angle), base[3:])
        pos = base[:3] + rng.normal(0.0, prior.root_sigma_pos, size=3)
        root = dq_from_pose(np.concatenate([pos, quat]))
        for node, dq in forward_kinematics(model, jc, root_pose=root).items():
            pools[node][k] = dq
    return pools


def _prior_beliefs(graph, obs_points, params):
    if params.prior_bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in params.prior_bounds)
    else:
        lo, hi = cloud_bounds(obs_points)
        pad = params.bbox_pad_frac * (hi - lo)
        lo, hi = lo - pad, hi + pad
    pools = params.prior_poses
    if pools is None and params.prior.kind == "kinematic":
        pools = _kinematic_pools(graph.model, params.prior, params.M,
                                 derived_rng(params.seed, 0, 3, 0))
    beliefs = {}
    for k, node in enumerate(graph.nodes):
        size = max(len(graph.neighbors[node]), 1) * params.M
        rng = derived_rng(params.seed, 0, 1, k)
        if pools is not None:
            pool = pools
            if isinstance(pool, dict):
                pool = pool[node]
            pool = np.asarray(pool, dtype=float)
            idx = rng.integers(0, len(pool), size=size)
            poses = pool[idx]
        else:
            poses = sample_pose_prior(size, lo, hi, rng)
        beliefs[node] = Belief(node, poses)
    return beliefs


def run_inference(graph, obs, params, gt_poses=None):
    """Synchronous message passing for ``params.iterations`` rounds.

    ``obs`` is the observed cloud or a prebuilt :class:`ObservationIndex`.
    Every iteration recomputes all directed messages from the previous
    iteration's beliefs and messages, then updates all beliefs.  Degenerate
    weights never abort a run: messages fall back to uniform weights and
    beliefs reset to the prior, both counted in the records.  When ground
    truth poses are supplied, each record carries the estimate's mean
    point-displacement error for its part.  Per-iteration record estimates
    reuse the likelihood scores from belief pooling (best pooled sample);
    the returned final estimates re-score the final belief samples.
    """
    index = obs if isinstance(obs, ObservationIndex) else ObservationIndex(obs)
    beliefs = _prior_beliefs(graph, index.points, params)
    messages = {}  # (sender, receiver) -> Message
    records = []
    snapshots = {}
    degenerate_total = 0
    directed = graph.directed_edges()
    node_index = {node: k for k, node in enumerate(graph.nodes)}

    def record_iteration(iteration, estimates, events):
        for node in graph.nodes:
            stats = belief_stats(beliefs[node])
            rec = {
                "iteration": iteration,
                "node": node,
                "std_pos": stats.std_pos.tolist(),
                "certain": stats.certain,
                "degenerate_events": events.get(node, 0),
            }
            if gt_poses is not None:
                rec["add_m"] = float(add_metric(
                    estimates[node], gt_poses[node], model_points(graph.model.parts[node]),
                ))
            records.append(rec)

    estimates = {
        node: mle_estimate(beliefs[node], graph.model.parts[node], index, params)
        for node in graph.nodes
    }
    record_iteration(0, estimates, {})
    if params.snapshot_every:
        snapshots[0] = {n: b.poses.copy() for n, b in beliefs.items()}

    for iteration in range(1, params.iterations + 1):
        events = {}
        new_messages = {}
        for e_idx, (sender, receiver) in enumerate(directed):
            rng = derived_rng(params.seed, iteration, 0, e_idx)
            msgs_into_sender = [m for (src, dst), m in messages.items() if dst == sender]
            try:
                msg = message_update(
                    graph, sender, receiver, beliefs[receiver],
                    msgs_into_sender, index, params, rng,
                )
            except DegenerateMessageError as err:
                msg = Message(sender, receiver, err.poses,
                              np.full(params.M, 1.0 / params.M))
                events[sender] = events.get(sender, 0) + 1
                degenerate_total += 1
            new_messages[(sender, receiver)] = msg
        messages = new_messages

        scale = params.diffusion_scale(iteration)
        new_beliefs = {}
        for node in graph.nodes:
            rng = derived_rng(params.seed, iteration, 1, node_index[node])
            msgs_in = [messages[(nb, node)] for nb in graph.neighbors[node]]
            part = graph.model.parts[node]
            try:
                new_beliefs[node] = belief_update(
                    node, msgs_in, part, index, params, rng, scale,
                )
            except DegenerateBeliefError:
                new_beliefs[node] = _prior_beliefs(graph, index.points, params)[node]
                events[node] = events.get(node, 0) + 1
                degenerate_total += 1
        beliefs = new_beliefs

        estimates = {
            node: beliefs[node].estimate if beliefs[node].estimate is not None
            else mle_estimate(beliefs[node], graph.model.parts[node], index, params)
            for node in graph.nodes
        }
        record_iteration(iteration, estimates, events)
        if params.snapshot_every and iteration % params.snapshot_every == 0:
            snapshots[iteration] = {n: b.poses.copy() for n, b in beliefs.items()}

    final_estimates = {
        node: mle_estimate(beliefs[node], graph.model.parts[node], index, params)
        for node in graph.nodes
    }
    return InferenceResult(
        beliefs=beliefs,
        estimates=final_estimates,
        records=records,
        snapshots=snapshots,
        degenerate_events=degenerate_total,
    )
