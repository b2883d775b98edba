"""Scenario configuration: road, agents, action schedules and candidates.

Configs are plain frozen dataclasses built from JSON-style dicts by
:func:`scenario_from_dict`, which applies defaults and validates everything
it can before a model is ever assembled.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .geometry import Lane, RoadGeometry
from .values import Action
from .vehicle import ControllerGains, PlannerConfig, RewardWeights

DEFAULT_STEP = 0.04


class ScenarioError(ValueError):
    """Invalid scenario or trajectory input."""


@dataclass(frozen=True)
class ScheduledAction:
    """Decision taken at ``start``; goals are due after the given durations."""

    start: float
    goal_speed: float
    goal_lane: int
    speed_duration: float = 2.0
    lane_duration: float = 4.0
    label: str = ""

    def to_action(self) -> Action:
        return Action(self.goal_speed, self.start + self.speed_duration, self.goal_lane,
                      self.start + self.lane_duration, self.label)


@dataclass(frozen=True)
class AgentConfig:
    id: int
    lane: int
    x: float
    speed: float
    y: float | None = None
    heading: float | None = None
    length: float = 4.5
    width: float = 1.8
    mass: float = 1500.0
    inertia: float | None = None
    entry: float = 0.0
    exit: float | None = None
    actions: tuple = ()
    reactive: bool = False
    color: str | None = None
    max_motor_torque: float = 1500.0
    max_steer: float = 0.5
    wheel_radius: float = 0.3
    gains: ControllerGains = field(default_factory=ControllerGains)
    planner: PlannerConfig = field(default_factory=PlannerConfig)


@dataclass(frozen=True)
class CandidateSpec:
    """Which scheduled decision to remove; resolved against a scene later."""

    agent: int
    action: str | None = None
    start: float | None = None
    replacement: Action | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    road: RoadGeometry
    agents: tuple
    step_size: float = DEFAULT_STEP
    horizon: float = 10.0
    seed: int = 0
    drag_coefficient: float | None = None
    rotational_drag: float = 500.0
    restitution: float = 0.0
    model: str = "scene"
    candidates: tuple = ()

    def agent(self, agent_id: int) -> AgentConfig:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise ScenarioError(f"no agent {agent_id}")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.step_size))


def on_grid(t: float, dt: float) -> bool:
    k = round(t / dt)
    return abs(k * dt - t) <= 1e-9 * max(1.0, abs(t))


# -- dict conversion ------------------------------------------------------------------


def _pick(d: dict, cls, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    return dict(d)


def _num(d: dict, key: str, where: str, default=None, positive=False, allow_none=False):
    if key not in d or d[key] is None:
        if default is None and not allow_none:
            raise ScenarioError(f"{where}: missing '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError(f"{where}: '{key}' must be a finite number")
    if positive and not v > 0:
        raise ScenarioError(f"{where}: '{key}' must be positive")
    return float(v)


def road_from_dict(d: dict) -> RoadGeometry:
    if not isinstance(d, dict) or "lanes" not in d:
        raise ScenarioError("road: needs a 'lanes' list")
    lanes = []
    for i, ln in enumerate(d["lanes"]):
        where = f"road.lanes[{i}]"
        _pick(ln, Lane, where)
        if "id" in ln or "lane_id" not in ln:
            raise ScenarioError(f"{where}: needs 'lane_id'")
        width = _num(ln, "width", where, default=3.5)
        if not width > 0:
            raise ScenarioError(f"{where}: 'width' must be positive")
        lanes.append(Lane(int(ln["lane_id"]), _num(ln, "center", where), width,
                          int(ln.get("direction", 1))))
    try:
        return RoadGeometry(tuple(lanes), _num(d, "length", "road", default=1000.0, positive=True))
    except ValueError as exc:
        raise ScenarioError(f"road: {exc}") from None


def _action_from_dict(d: dict, where: str) -> ScheduledAction:
    _pick(d, ScheduledAction, where)
    return ScheduledAction(
        start=_num(d, "start", where),
        goal_speed=_num(d, "goal_speed", where),
        goal_lane=int(d["goal_lane"]) if "goal_lane" in d else _missing(where, "goal_lane"),
        speed_duration=_num(d, "speed_duration", where, default=2.0, positive=True),
        lane_duration=_num(d, "lane_duration", where, default=4.0, positive=True),
        label=str(d.get("label", "")),
    )


def _missing(where, key):
    raise ScenarioError(f"{where}: missing '{key}'")


def _sub(cls, d: Any, where: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected an object")
    _pick(d, cls, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _planner_from_dict(d: Any, where: str) -> PlannerConfig:
    if d is None:
        return PlannerConfig()
    d = dict(d)
    allowed = {"candidate_speeds", "candidate_horizons", "weights", "sim_step", "change_lanes"}
    unknown = set(d) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    kw: dict[str, Any] = {}
    if "weights" in d:
        kw["weights"] = _sub(RewardWeights, d["weights"], f"{where}.weights")
    for key in ("candidate_speeds", "candidate_horizons"):
        if key in d:
            kw[key] = tuple(float(x) for x in d[key])
    if "sim_step" in d:
        kw["sim_step"] = _num(d, "sim_step", where, positive=True)
    if "change_lanes" in d:
        kw["change_lanes"] = bool(d["change_lanes"])
    try:
        return PlannerConfig(**kw)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def agent_from_dict(d: dict, road: RoadGeometry, dt: float, horizon: float) -> AgentConfig:
    where = f"agent {d.get('id', '?')}"
    _pick(d, AgentConfig, where)
    if "id" not in d:
        raise ScenarioError("agent: missing 'id'")
    lane = int(d["lane"]) if "lane" in d else _missing(where, "lane")
    if not road.has_lane(lane):
        raise ScenarioError(f"{where}: lane {lane} is not on the road")
    entry = _num(d, "entry", where, default=0.0)
    exit_ = _num(d, "exit", where, allow_none=True)
    if exit_ is not None and not entry < exit_:
        raise ScenarioError(f"{where}: entry must precede exit")
    for t, label in ((entry, "entry"), (exit_, "exit")):
        if t is not None and not on_grid(t, dt):
            raise ScenarioError(f"{where}: {label} time {t} is off the {dt} s grid")
    if entry < 0 or entry > horizon:
        raise ScenarioError(f"{where}: entry outside [0, horizon]")
    actions = []
    for i, a in enumerate(d.get("actions", ())):
        act = _action_from_dict(a, f"{where}.actions[{i}]")
        if not road.has_lane(act.goal_lane):
            raise ScenarioError(f"{where}: action goal lane {act.goal_lane} is not on the road")
        if not on_grid(act.start, dt):
            raise ScenarioError(f"{where}: action start {act.start} is off the {dt} s grid")
        if not (act.speed_duration > 0 and act.lane_duration > 0):
            raise ScenarioError(f"{where}: action durations must be positive")
        if act.start < entry:
            raise ScenarioError(f"{where}: action at {act.start} precedes entry")
        actions.append(act)
    actions.sort(key=lambda a: a.start)
    starts = [a.start for a in actions]
    if len(set(starts)) != len(starts):
        raise ScenarioError(f"{where}: two actions share a start time")
    kw = dict(
        id=int(d["id"]), lane=lane, x=_num(d, "x", where), speed=_num(d, "speed", where),
        y=_num(d, "y", where, allow_none=True), heading=_num(d, "heading", where, allow_none=True),
        length=_num(d, "length", where, default=4.5, positive=True),
        width=_num(d, "width", where, default=1.8, positive=True),
        mass=_num(d, "mass", where, default=1500.0, positive=True),
        inertia=_num(d, "inertia", where, allow_none=True), entry=entry, exit=exit_,
        actions=tuple(actions), reactive=bool(d.get("reactive", False)),
        color=d.get("color"),
        max_motor_torque=_num(d, "max_motor_torque", where, default=1500.0, positive=True),
        max_steer=_num(d, "max_steer", where, default=0.5, positive=True),
        wheel_radius=_num(d, "wheel_radius", where, default=0.3, positive=True),
        gains=_sub(ControllerGains, d.get("gains"), f"{where}.gains"),
        planner=_planner_from_dict(d.get("planner"), f"{where}.planner"),
    )
    if kw["inertia"] is not None and not kw["inertia"] > 0:
        raise ScenarioError(f"{where}: inertia must be positive")
    return AgentConfig(**kw)


def candidate_from_dict(d: dict) -> CandidateSpec:
    if "agent" not in d:
        raise ScenarioError("candidate: missing 'agent'")
    repl = d.get("replacement")
    if repl is not None:
        try:
            repl = Action(float(repl["goal_speed"]), float(repl["speed_goal_time"]),
                          int(repl["goal_lane"]), float(repl["lane_goal_time"]),
                          str(repl.get("label", "replacement")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"candidate replacement: {exc}") from None
    start = d.get("start")
    return CandidateSpec(int(d["agent"]), d.get("action"),
                         None if start is None else float(start), repl)


def parse_candidate(text: str) -> CandidateSpec:
    """Parse ``agent=2,action=merge,start=3.2`` (only ``agent`` is required)."""
    fields_: dict[str, str] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ScenarioError(f"candidate '{text}': expected key=value pairs")
        k, v = part.split("=", 1)
        fields_[k.strip()] = v.strip()
    unknown = set(fields_) - {"agent", "action", "start"}
    if unknown:
        raise ScenarioError(f"candidate '{text}': unknown key(s) {sorted(unknown)}")
    if "agent" not in fields_:
        raise ScenarioError(f"candidate '{text}': missing agent")
    try:
        return CandidateSpec(int(fields_["agent"]), fields_.get("action"),
                             float(fields_["start"]) if "start" in fields_ else None)
    except ValueError as exc:
        raise ScenarioError(f"candidate '{text}': {exc}") from None


def scenario_from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a JSON object")
    allowed = {f.name for f in fields(ScenarioConfig)} | {"description"}
    unknown = set(d) - allowed
    if unknown:
        raise ScenarioError(f"scenario: unknown field(s) {sorted(unknown)}")
    dt = _num(d, "step_size", "scenario", default=DEFAULT_STEP, positive=True)
    horizon = _num(d, "horizon", "scenario", default=10.0, positive=True)
    if not on_grid(horizon, dt):
        raise ScenarioError(f"scenario: horizon {horizon} is off the {dt} s grid")
    model = d.get("model", "scene")
    if model not in ("scene", "kinematics", "point_mass"):
        raise ScenarioError(f"scenario: unknown model {model!r}")
    road = road_from_dict(d.get("road", {"lanes": [{"lane_id": 1, "center": 0.0}]}))
    agents = tuple(agent_from_dict(a, road, dt, horizon) for a in d.get("agents", ()))
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ScenarioError("scenario: duplicate agent id")
    if model == "scene" and not agents:
        raise ScenarioError("scenario: a scene needs at least one agent")
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("scenario: 'seed' must be an integer")
    restitution = _num(d, "restitution", "scenario", default=0.0)
    if not 0.0 <= restitution <= 1.0:
        raise ScenarioError("scenario: restitution must lie in [0, 1]")
    drag = _num(d, "drag_coefficient", "scenario", allow_none=True)
    if drag is not None and drag < 0:
        raise ScenarioError("scenario: drag_coefficient must be non-negative")
    return ScenarioConfig(
        name=str(d.get("name", "scenario")), road=road, agents=agents, step_size=dt,
        horizon=horizon, seed=seed, drag_coefficient=drag,
        rotational_drag=_num(d, "rotational_drag", "scenario", default=500.0),
        restitution=restitution, model=model,
        candidates=tuple(candidate_from_dict(c) for c in d.get("candidates", ())),
    )


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`scenario_from_dict` (planner simulator is not serialised)."""
    def agent(a: AgentConfig) -> dict:
        out = {k: v for k, v in asdict(a).items() if k not in ("actions", "gains", "planner")}
        out["actions"] = [asdict(x) for x in a.actions]
        out["gains"] = asdict(a.gains)
        p = a.planner
        out["planner"] = {"candidate_speeds": list(p.candidate_speeds),
                          "candidate_horizons": list(p.candidate_horizons),
                          "weights": asdict(p.weights), "sim_step": p.sim_step,
                          "change_lanes": p.change_lanes}
        return out

    return {
        "name": cfg.name,
        "road": {"length": cfg.road.length,
                 "lanes": [asdict(ln) for ln in cfg.road.lanes]},
        "step_size": cfg.step_size, "horizon": cfg.horizon, "seed": cfg.seed,
        "drag_coefficient": cfg.drag_coefficient, "rotational_drag": cfg.rotational_drag,
        "restitution": cfg.restitution, "model": cfg.model,
        "agents": [agent(a) for a in cfg.agents],
        "candidates": [{"agent": c.agent, "action": c.action, "start": c.start}
                       for c in cfg.candidates],
    }
