from .modes import BehaviorMode, ProblemInstance, RealizedWaypoint, load_modes, sample_instance
from .freeflyer_ocp import (
    build_freeflyer_ocp,
    build_freeflyer_refinement,
    freeflyer_two_stage,
    freeflyer_coast_warm,
)
from .rpo_ocp import (
    build_rpo_ocp,
    build_rpo_refinement,
    get_safety_context,
    rpo_cvx_warm_start,
)
from .evaluate import (
    SemanticVerdict,
    node_violations,
    safety_eval,
    semantic_eval_freeflyer,
    semantic_eval_rpo,
)

__all__ = [
    "BehaviorMode",
    "ProblemInstance",
    "RealizedWaypoint",
    "SemanticVerdict",
    "build_freeflyer_ocp",
    "build_freeflyer_refinement",
    "build_rpo_ocp",
    "build_rpo_refinement",
    "freeflyer_coast_warm",
    "freeflyer_two_stage",
    "get_safety_context",
    "load_modes",
    "node_violations",
    "rpo_cvx_warm_start",
    "safety_eval",
    "sample_instance",
    "semantic_eval_freeflyer",
    "semantic_eval_rpo",
]
