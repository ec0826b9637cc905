from .constraints import (
    drivable_area_compliance,
    driving_direction_compliance,
    no_at_fault_collision,
    traffic_light_compliance,
)
from .evaluation import PlanEvaluation, evaluate_plan, score_frame
from .features import (
    MovingBox,
    comfort_scores,
    ego_progress,
    kinematic_series,
    lane_keeping,
    min_time_to_collision,
    mttc,
    ttc_constant_velocity,
    ttc_feature,
)
from .scoring import (
    ComfortThresholds,
    CriticalFlags,
    FrameScore,
    ScorerWeights,
    ade,
    closed_loop_score,
    epdms_frame,
    min_ade,
    route_completion,
)

__all__ = (
    "ComfortThresholds",
    "CriticalFlags",
    "FrameScore",
    "MovingBox",
    "PlanEvaluation",
    "ScorerWeights",
    "ade",
    "closed_loop_score",
    "comfort_scores",
    "drivable_area_compliance",
    "driving_direction_compliance",
    "ego_progress",
    "epdms_frame",
    "evaluate_plan",
    "kinematic_series",
    "lane_keeping",
    "min_ade",
    "min_time_to_collision",
    "mttc",
    "no_at_fault_collision",
    "route_completion",
    "score_frame",
    "traffic_light_compliance",
    "ttc_constant_velocity",
    "ttc_feature",
)
