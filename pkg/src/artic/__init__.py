"""Articulated-object pose estimation from point clouds.

Belief propagation over a Markov random field built from a kinematic model,
with particle-set messages drawn pull-style from receiver beliefs, plus a
whole-object particle filter baseline, a dense grid oracle for validation,
and a benchmark harness.
"""

from .baseline import ParticleSet, PfParams, pf_init, pf_step, pf_weight, run_pf
from .geometry import (
    DegeneratePoseError,
    dq_apply,
    dq_conjugate,
    dq_distance,
    dq_from_pose,
    dq_identity,
    dq_mul,
    dq_normalize,
    dq_to_pose,
)
from .gridbp import ChainOracleError, GridSpec, grid_bp, validate_chain
from .metrics import AddResult, add_metric, aggregate_runs, model_points
from .model import (
    Joint,
    KinematicModel,
    ModelError,
    PartGeometry,
    build_mrf,
    forward_kinematics,
    limits_as_dq,
    parse_model,
    serialize_model,
)
from .observation import (
    EmptyObservationError,
    ObservationError,
    SceneSpec,
    occlude,
    read_xyz,
    render_scene,
    sample_part_cloud,
    write_xyz,
)
from .pmpnbp import (
    Belief,
    BeliefStats,
    DegenerateBeliefError,
    DegenerateMessageError,
    InferenceParams,
    Message,
    belief_stats,
    belief_update,
    message_update,
    mle_estimate,
    run_inference,
)
from .potentials import (
    ObservationIndex,
    PairwiseParams,
    UnaryParams,
    pairwise_potential,
    pairwise_sample,
    unary_potential,
)

__version__ = "0.1.0"
