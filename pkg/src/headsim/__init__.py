"""Context-aware head-rotation synthesis for embodied agents.

The pipeline plans head orientations offline over a replayed body
trajectory (perception, memory, symbolic reasoning) and refines them
near-online against look-ahead predictions; the evaluation harness
compares orientation traces with length-normalized quaternion DTW.
"""

from .config import HoldParams, LatencyModel, SimConfig
from .engine import (
    ExecutedTrace,
    HeadPhase,
    HeadState,
    Plan,
    PlannedAction,
    derive_seed,
    run_dps,
    run_multi,
    run_res,
    sample_hold,
    simulate,
    step_head,
)
from .evaluation import (
    HeadTrace,
    ablation_suite,
    confidence_interval_95,
    dtw,
    intra_human,
    responsiveness_matrix,
)
from .geom import AngularRate, UnitQuaternion, angular_distance, slerp, step_toward
from .memory import ActionReason, Driver, EntitySnapshot, Fmm, MemoryEntry, tag_relevance
from .perception import NoveltyState, Observation, capture, novelty_gate, ssim
from .reasoning import (
    DriverSet,
    LookaheadBundle,
    OracleBackend,
    OracleThresholds,
    PlanContext,
    RemoteBackend,
    Verdict,
)
from .world import (
    BodyTrajectory,
    Entity,
    FovParams,
    Goal,
    Pose,
    Scene,
    SceneView,
    Sighting,
    pose_at,
    render_semantic_raster,
    visible_entities,
)

__version__ = "0.1.0"
