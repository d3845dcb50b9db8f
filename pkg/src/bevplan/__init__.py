"""bevplan: open-loop BEV trajectory evaluation and preference-based tuning."""

from .core import (
    BevGridSpec,
    CriticalObjectConfig,
    EgoFootprint,
    EgoState,
    ObjectState,
    OccupancyGrid,
    Trajectory,
    VisibilityMask,
    Waypoint,
    displacement_at,
    rasterize_footprint,
    select_critical_objects,
    subsample_1hz,
    world_to_grid,
)
from .meta_actions import (
    ActionSequence,
    Formulation,
    LabelerThresholds,
    LateralAction,
    LongitudinalAction,
    MetaAction,
    eval_action_accuracy,
    label_cumulative_sequence,
    label_interval,
    label_local_sequence,
)
from .metrics import (
    EvalSample,
    MetricReport,
    Protocol,
    apply_flip_conventions,
    collision_horizon,
    collision_steps,
    evaluate_batch,
    l2_horizon,
)

__version__ = "0.1.0"
