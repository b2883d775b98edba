"""Constant-space temporal structural causal models with a vehicle scene and
but-for counterfactual attribution on top."""
from .composition import (
    InputSetChain,
    ModelTimeline,
    check_rcs,
    connect_socket,
    create_chain,
    disconnect_socket,
    introduce_source,
    merge,
    refresh_source,
    split,
)
from .counterfactual import (
    AttributionReport,
    CandidateCause,
    FactualRecord,
    OutcomeSummary,
    but_for_attribute,
    classify_outcome,
    replay_factual,
    splice_counterfactual,
)
from .rollout import check_rollout_equivalence, rollout_window_graph
from .scenario import ScenarioConfig, scenario_from_dict
from .scene import Scene, build_scene, simulate
from .scm import (
    EvaluationContext,
    Scm,
    buffer,
    const,
    evaluate,
    evaluate_many,
    exogenous,
    intervene,
    plain,
    pts,
    socket,
    tctd,
    time_conditional,
    tssp,
    tssq,
    union,
    validate,
)
from .values import Action, Vec2

__version__ = "0.1.0"
