"""Agent templates: front-wheel-drive car, controllers and a greedy planner."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

from .composition import merge
from .dynamics import BodyState, RigidBodySpec, build_rigid_body_scm
from .geometry import Obb, RoadGeometry, obb_overlap
from .scm import (
    Degenerate,
    Scm,
    ScmError,
    buffer,
    const,
    plain,
    pts,
    socket,
    tctd,
    time_conditional,
    tssq,
)
from .values import (
    DIMENSIONLESS,
    EMPTY,
    KG,
    M,
    M_S,
    M_S2,
    N,
    NM,
    RAD,
    RAD_S,
    S,
    ZERO2,
    Action,
    Vec2,
    as_source_set,
)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


# -- FWD car --------------------------------------------------------------------------


@dataclass(frozen=True)
class FwdCarSpec:
    rigid_body: RigidBodySpec
    wheel_radius: float = 0.3
    wheelbase: float = 2.7
    front_axle_offset: float = 1.2  # centre of mass to front axle
    cornering_stiffness_front: float = 120_000.0
    cornering_stiffness_rear: float = 120_000.0
    max_motor_torque: float = 1500.0
    max_steer: float = 0.5
    min_slip_speed: float = 6.0  # keeps the explicit tyre update stable at low speed

    def __post_init__(self):
        for f in ("wheel_radius", "wheelbase", "front_axle_offset", "cornering_stiffness_front",
                  "cornering_stiffness_rear", "max_motor_torque", "max_steer", "min_slip_speed"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive")
        if not self.front_axle_offset < self.wheelbase:
            raise ValueError("front axle offset must be shorter than the wheelbase")

    @property
    def rear_axle_offset(self) -> float:
        return self.wheelbase - self.front_axle_offset

    def seed_values(self, name: str) -> dict[str, Any]:
        return self.rigid_body.seed_values(name)


@dataclass(frozen=True)
class BicycleTyres:
    """Linear-tyre dynamic bicycle; returns world-frame force and yaw torque."""

    wheel_radius: float
    front: float
    rear: float
    c_front: float
    c_rear: float
    min_slip_speed: float

    def __call__(self, vel, rot, ang_vel, torque, steer):
        c, s = math.cos(rot), math.sin(rot)
        u = c * vel[0] + s * vel[1]
        w = -s * vel[0] + c * vel[1]
        u_eff = max(abs(u), self.min_slip_speed)
        if u < 0:
            u_eff = -u_eff
        alpha_f = steer - math.atan2(w + self.front * ang_vel, u_eff)
        alpha_r = -math.atan2(w - self.rear * ang_vel, u_eff)
        fy_f = self.c_front * alpha_f
        fy_r = self.c_rear * alpha_r
        fx = torque / self.wheel_radius
        cd, sd = math.cos(steer), math.sin(steer)
        fx_body = fx * cd - fy_f * sd
        fy_body = fx * sd + fy_f * cd + fy_r
        yaw = self.front * (fx * sd + fy_f * cd) - self.rear * fy_r
        return (Vec2(c * fx_body - s * fy_body, s * fx_body + c * fy_body), yaw)


def _first(pair):
    return pair[0]


def _second(pair):
    return pair[1]


def build_fwd_car_scm(spec: FwdCarSpec, name: str = "car") -> Scm:
    """Rigid body driven by ``motor_torque`` and ``steer`` sockets."""
    n = lambda role: f"{name}.{role}"  # noqa: E731
    body = build_rigid_body_scm(spec.rigid_body, name)
    part = Scm([
        socket(n("motor_torque"), Degenerate(0.0), unit=NM),
        socket(n("steer"), Degenerate(0.0), unit=RAD),
        buffer(n("motor_torque_buff"), n("motor_torque")),
        buffer(n("steer_buff"), n("steer")),
        socket(n("car_vel"), Degenerate(ZERO2), unit=M_S),
        socket(n("car_rot"), Degenerate(0.0), unit=RAD),
        socket(n("car_ang_vel"), Degenerate(0.0), unit=RAD_S),
        const(n("wheel_radius"), spec.wheel_radius, unit=M),
        const(n("max_motor_torque"), spec.max_motor_torque, unit=NM),
        plain(n("tyre_forces"),
              [n("car_vel"), n("car_rot"), n("car_ang_vel"), n("motor_torque_buff"), n("steer_buff")],
              BicycleTyres(spec.wheel_radius, spec.front_axle_offset, spec.rear_axle_offset,
                           spec.cornering_stiffness_front, spec.cornering_stiffness_rear,
                           spec.min_slip_speed)),
        plain(n("drive_force"), [n("tyre_forces")], _first, unit=N),
        plain(n("drive_torque"), [n("tyre_forces")], _second, unit=NM),
    ], name=f"{name}.fwd_car")
    return merge(body, part, [
        (n("other_force"), n("drive_force")),
        (n("other_torque"), n("drive_torque")),
        (n("car_vel"), n("lin_vel_buff")),
        (n("car_rot"), n("rot_buff")),
        (n("car_ang_vel"), n("ang_vel_buff")),
    ], key=f"{name}.fwd_car", name=name)


# -- controllers ----------------------------------------------------------------------


@dataclass(frozen=True)
class ControllerGains:
    k_p: float = 0.6
    k_d: float = 0.05
    steer_horizon: float = 1.0
    min_horizon: float = 0.5
    min_lookahead: float = 5.0
    epsilon: float = 0.1  # floor on the time-to-goal divisor

    def __post_init__(self):
        if not self.k_p > 0:
            raise ValueError("k_p must be positive")
        if self.k_d < 0:
            raise ValueError("k_d must be non-negative")
        if not (self.steer_horizon > 0 and self.epsilon > 0 and self.min_horizon > 0):
            raise ValueError("horizons and epsilon must be positive")


def _goal_speed(action):
    return action.goal_speed


def _speed_goal_time(action):
    return action.speed_goal_time


def _lane_goal_time(action):
    return action.lane_goal_time


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1]


@dataclass(frozen=True)
class _RequiredAccel:
    epsilon: float

    def __call__(self, goal_speed, v_lon, time_to_goal):
        return (goal_speed - v_lon) / max(self.epsilon, time_to_goal)


def _required_force(a_req, mass, env_lon):
    return mass * a_req - env_lon


def _torque(force, wheel_radius, max_torque):
    return clamp(force * wheel_radius, -max_torque, max_torque)


def build_motor_controller_scm(gains: ControllerGains, name: str, max_motor_torque: float
                               ) -> Scm:
    """Torque needed to reach the goal speed by the goal time.

    Inputs (sockets): ``action``, ``speed`` (velocity vector), ``dir`` (unit
    heading), ``mass``, ``wheel_radius`` and ``env_force``.
    """
    n = lambda role: f"{name}.{role}"  # noqa: E731
    return Scm([
        socket(n("action"), Degenerate(None)),
        buffer(n("action_buff"), n("action")),
        socket(n("speed"), Degenerate(ZERO2), unit=M_S),
        socket(n("dir"), Degenerate(Vec2(1.0, 0.0)), unit=DIMENSIONLESS),
        socket(n("mass"), Degenerate(1.0), unit=KG),
        socket(n("wheel_radius"), Degenerate(1.0), unit=M),
        socket(n("env_force"), Degenerate(ZERO2), unit=N),
        const(n("max_torque"), float(max_motor_torque), unit=NM),
        plain(n("goal_speed"), [n("action_buff")], _goal_speed, unit=M_S),
        plain(n("speed_goal_time"), [n("action_buff")], _speed_goal_time, unit=S),
        tctd(n("time_to_goal"), n("speed_goal_time")),
        plain(n("v_lon"), [n("speed"), n("dir")], _dot, unit=M_S),
        plain(n("a_req"), [n("goal_speed"), n("v_lon"), n("time_to_goal")],
              _RequiredAccel(gains.epsilon), unit=M_S2, parent_units=(M_S, M_S, S)),
        plain(n("env_lon"), [n("env_force"), n("dir")], _dot, unit=N),
        plain(n("force_req"), [n("a_req"), n("mass"), n("env_lon")], _required_force, unit=N,
              parent_units=(M_S2, KG, N)),
        plain(n("motor_torque"), [n("force_req"), n("wheel_radius"), n("max_torque")], _torque,
              unit=NM, parent_units=(N, M, NM)),
    ], name=name)


@dataclass(frozen=True)
class _Lookahead:
    horizon: float
    min_horizon: float

    def __call__(self, lane_ttg):
        return clamp(lane_ttg / 3.0, self.min_horizon, self.horizon)


@dataclass(frozen=True)
class _LaneCentre:
    road: RoadGeometry

    def __call__(self, action):
        return self.road.lane(action.goal_lane).center


@dataclass(frozen=True)
class _ExpectedPos:
    min_lookahead: float

    def __call__(self, pos, vel, heading, horizon):
        dist = max(math.hypot(vel[0], vel[1]) * horizon, self.min_lookahead)
        return Vec2(pos[0] + heading[0] * dist, pos[1] + heading[1] * dist)


def _project(expected, lane_y):
    return Vec2(expected[0], lane_y)


def _angle_to_target(target, pos, heading):
    d = (target[0] - pos[0], target[1] - pos[1])
    return math.atan2(heading[0] * d[1] - heading[1] * d[0], heading[0] * d[0] + heading[1] * d[1])


def _angle_delta(now, prev):
    return wrap_angle(now - prev)


@dataclass(frozen=True)
class _SteerPd:
    k_p: float
    k_d: float
    max_steer: float

    def __call__(self, err, rate):
        return clamp(self.k_p * err + self.k_d * rate, -self.max_steer, self.max_steer)


def build_steer_controller_scm(gains: ControllerGains, name: str, road: RoadGeometry,
                               max_steer: float, step_size: float,
                               start_time: float = 0.0) -> Scm:
    """PD steering towards the goal lane's centreline.

    The look-ahead point ``pos + heading * |v| * h`` is projected onto the goal
    lane; the error is the angle between the heading and the direction to that
    projection. ``h`` shrinks as the lane goal time approaches. The derivative
    uses the previous error from ``ang_diff_buff``; at ``start_time`` (no
    history yet) it is zero.
    """
    n = lambda role: f"{name}.{role}"  # noqa: E731
    return Scm([
        socket(n("action"), Degenerate(None)),
        buffer(n("action_buff"), n("action")),
        socket(n("pos"), Degenerate(ZERO2), unit=M),
        socket(n("lin_vel"), Degenerate(ZERO2), unit=M_S),
        socket(n("dir"), Degenerate(Vec2(1.0, 0.0)), unit=DIMENSIONLESS),
        plain(n("lane_goal_time"), [n("action_buff")], _lane_goal_time, unit=S),
        tctd(n("lane_time_to_goal"), n("lane_goal_time")),
        plain(n("horizon"), [n("lane_time_to_goal")],
              _Lookahead(gains.steer_horizon, gains.min_horizon), unit=S),
        plain(n("goal_lane_y"), [n("action_buff")], _LaneCentre(road), unit=M),
        plain(n("expected_pos"), [n("pos"), n("lin_vel"), n("dir"), n("horizon")],
              _ExpectedPos(gains.min_lookahead), unit=M),
        plain(n("projection"), [n("expected_pos"), n("goal_lane_y")], _project, unit=M),
        plain(n("ang_diff"), [n("projection"), n("pos"), n("dir")], _angle_to_target, unit=RAD),
        buffer(n("ang_diff_buff"), n("ang_diff")),
        pts(n("prev_ang_diff_raw"), n("ang_diff_buff")),
        time_conditional(n("prev_ang_diff"), n("ang_diff_buff"), n("prev_ang_diff_raw"),
                         start_time + 0.5 * step_size),
        plain(n("ang_diff_delta"), [n("ang_diff_buff"), n("prev_ang_diff")], _angle_delta,
              unit=RAD),
        tssq(n("ang_diff_rate"), n("ang_diff_delta")),
        plain(n("steer"), [n("ang_diff_buff"), n("ang_diff_rate")],
              _SteerPd(gains.k_p, gains.k_d, max_steer), unit=RAD),
    ], name=name)


def build_full_control_scm(motor: Scm, steer: Scm, motor_name: str, steer_name: str,
                           name: str = "control") -> Scm:
    """Both controllers behind one ``{motor_name}.action`` socket."""
    return merge(motor, steer, [(f"{steer_name}.action", f"{motor_name}.action")],
                 key=f"{name}.full_control", name=name)


# -- planner --------------------------------------------------------------------------


@dataclass(frozen=True)
class RewardWeights:
    progress: float = 1.0
    collision: float = 1.0e6
    lane_keep: float = 0.5
    comfort: float = 0.1

    def scaled(self, k: float) -> "RewardWeights":
        return RewardWeights(self.progress * k, self.collision * k, self.lane_keep * k,
                             self.comfort * k)


class CandidateOutcome(NamedTuple):
    candidate_id: int
    action: Action
    progress: float
    collided: bool
    lane_deviation: float
    jerk: float


def reward(outcome: CandidateOutcome, weights: RewardWeights) -> float:
    return (weights.progress * outcome.progress
            - weights.collision * float(outcome.collided)
            - weights.lane_keep * outcome.lane_deviation
            - weights.comfort * outcome.jerk)


def select_best(scores: Sequence[float]) -> int:
    """Index of the maximum score; ties go to the lowest index."""
    best, best_i = -math.inf, -1
    for i, s in enumerate(scores):
        if s > best:
            best, best_i = s, i
    if best_i < 0:
        raise ValueError("no candidate scores")
    return best_i


def _smoothstep(u: float) -> float:
    u = clamp(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def kinematic_rollout(ego: BodyState, others: Sequence[BodyState], action: Action, t: float,
                      duration: float, road: RoadGeometry, sim_step: float = 0.2,
                      candidate_id: int = 0) -> CandidateOutcome:
    """Cheap forward model for scoring one candidate action.

    The ego speed ramps linearly to the goal speed and its lateral position
    follows a smoothstep to the goal lane; other bodies keep their velocity.
    """
    heading = ego.heading
    sx = 1.0 if heading[0] >= 0 else -1.0
    v0 = ego.vel[0] * heading[0] + ego.vel[1] * heading[1]
    t_speed = max(action.speed_goal_time - t, sim_step)
    t_lane = max(action.lane_goal_time - t, sim_step)
    y0 = ego.pos[1]
    y_goal = road.lane(action.goal_lane).center
    accel = (action.goal_speed - v0) / t_speed
    steps = max(1, int(math.ceil(duration / sim_step - 1e-9)))
    x, speed = ego.pos[0], v0
    prev_a = 0.0
    progress = lane_dev = jerk = 0.0
    collided = False
    half = Vec2(ego.length / 2.0, ego.width / 2.0)
    centres = [ln.center for ln in road.lanes]
    for i in range(1, steps + 1):
        tau = i * sim_step
        a = accel if tau <= t_speed + 1e-9 else 0.0
        new_speed = speed + a * sim_step
        if (a > 0 and new_speed > action.goal_speed) or (a < 0 and new_speed < action.goal_speed):
            new_speed = action.goal_speed
        dx = 0.5 * (speed + new_speed) * sim_step
        x += sx * dx
        progress += dx
        speed = new_speed
        y = y0 + (y_goal - y0) * _smoothstep(tau / t_lane)
        dy = (y_goal - y0) * (_smoothstep(tau / t_lane) - _smoothstep((tau - sim_step) / t_lane))
        rot = math.atan2(dy, sx * max(dx, 1e-6))
        lane_dev += min(abs(y - c) for c in centres)
        jerk += abs(a - prev_a) / sim_step
        prev_a = a
        if not collided:
            box = Obb(Vec2(x, y), half, rot)
            for o in others:
                ob = Obb(Vec2(o.pos[0] + o.vel[0] * tau, o.pos[1] + o.vel[1] * tau),
                         Vec2(o.length / 2.0, o.width / 2.0), o.rot)
                if obb_overlap(box, ob):
                    collided = True
                    break
    return CandidateOutcome(candidate_id, action, progress, collided, lane_dev / steps,
                            jerk / steps)


@dataclass(frozen=True)
class PlannerConfig:
    candidate_speeds: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    candidate_horizons: tuple = (1.0, 2.0, 4.0)
    weights: RewardWeights = field(default_factory=RewardWeights)
    simulator: Callable = kinematic_rollout
    sim_step: float = 0.2
    change_lanes: bool = True

    def __post_init__(self):
        if not self.candidate_speeds or not self.candidate_horizons:
            raise ValueError("candidate lists must be non-empty")
        if any(h <= 0 for h in self.candidate_horizons):
            raise ValueError("candidate horizons must be positive")


def candidate_actions(cfg: PlannerConfig, ego: BodyState, t: float, road: RoadGeometry
                      ) -> list[Action]:
    """Speed-major, then lane, then horizon enumeration."""
    v_lon = ego.vel[0] * math.cos(ego.rot) + ego.vel[1] * math.sin(ego.rot)
    lane = road.lane_at(ego.pos[1])
    lanes = [lane] + (sorted(road.neighbours(lane)) if cfg.change_lanes else [])
    out = []
    for dv in cfg.candidate_speeds:
        for ln in lanes:
            for h in cfg.candidate_horizons:
                goal = max(0.0, round(v_lon + dv, 6))
                out.append(Action(goal, t + h, ln, t + h, label=f"v{dv:+g}/l{ln}/h{h:g}"))
    return out


@dataclass(frozen=True)
class _PlanStep:
    """Evaluates every candidate when the previous action has expired."""

    cfg: PlannerConfig
    road: RoadGeometry
    agent_id: int

    def __call__(self, now, prev_action, world):
        if prev_action is not None and prev_action.end_time > now + 1e-9:
            return None
        states = dict(as_source_set(world))
        ego = states.get(self.agent_id)
        if ego is None:
            return None
        others = [s for aid, s in sorted(states.items()) if aid != self.agent_id]
        duration = max(self.cfg.candidate_horizons)
        return tuple(
            self.cfg.simulator(ego, others, act, now, duration, self.road, self.cfg.sim_step, i)
            for i, act in enumerate(candidate_actions(self.cfg, ego, now, self.road))
        )


@dataclass(frozen=True)
class _Choose:
    weights: RewardWeights

    def __call__(self, outcomes, prev_action):
        if outcomes is None:
            return prev_action
        return outcomes[select_best([reward(o, self.weights) for o in outcomes])].action


def _negate(x):
    return -x


def build_greedy_planner_scm(cfg: PlannerConfig, name: str, agent_id: int, road: RoadGeometry,
                             initial_action: Action, step_size: float,
                             start_time: float = 0.0) -> Scm:
    """Greedy one-action planner.

    Sockets: ``pos`` (own position), ``world`` (source set of
    ``(agent_id, BodyState)``) and ``last_action`` (the action actually in
    force, normally the controller's ``action_buff``). While the previous action
    has not reached its goal time it is kept; otherwise every candidate is
    rolled forward by ``cfg.simulator``, the outcomes are buffered in
    ``sim_action_outcomes_buff`` and the best one is chosen.
    """
    n = lambda role: f"{name}.{role}"  # noqa: E731
    return Scm([
        socket(n("pos"), Degenerate(ZERO2), unit=M),
        socket(n("world"), Degenerate(EMPTY)),
        socket(n("last_action"), Degenerate(None)),
        const(n("zero_time"), 0.0, unit=S),
        tctd(n("minus_now"), n("zero_time")),
        plain(n("now"), [n("minus_now")], _negate, unit=S),
        const(n("initial_action"), initial_action),
        pts(n("prev_action_raw"), n("last_action")),
        time_conditional(n("prev_action"), n("initial_action"), n("prev_action_raw"),
                         start_time + 0.5 * step_size),
        plain(n("sim_action_outcomes"), [n("now"), n("prev_action"), n("world")],
              _PlanStep(cfg, road, agent_id)),
        buffer(n("sim_action_outcomes_buff"), n("sim_action_outcomes")),
        plain(n("action"), [n("sim_action_outcomes_buff"), n("prev_action")],
              _Choose(cfg.weights)),
    ], name=name)


def outcome_rows(outcomes: Sequence[CandidateOutcome], weights: RewardWeights) -> list[dict]:
    """Flat rows for the per-candidate CSV export."""
    rows = []
    for o in outcomes:
        rows.append({
            "candidate_id": o.candidate_id,
            "goal_speed": o.action.goal_speed,
            "speed_goal_time": o.action.speed_goal_time,
            "goal_lane": o.action.goal_lane,
            "lane_goal_time": o.action.lane_goal_time,
            "progress": o.progress,
            "collided": int(o.collided),
            "lane_deviation": o.lane_deviation,
            "jerk": o.jerk,
            "total": reward(o, weights),
        })
    return rows


def schedule_scm(name: str, schedule: Sequence[tuple[float, Action]]) -> Scm:
    """Chain of time-conditionals switching between scheduled actions."""
    if not schedule:
        raise ScmError("schedule needs at least one action")
    nodes = [const(f"{name}.a0", schedule[0][1])]
    prev = f"{name}.a0"
    for i, (start, act) in enumerate(schedule[1:], start=1):
        nodes.append(const(f"{name}.a{i}", act))
        nodes.append(time_conditional(f"{name}.s{i}", prev, f"{name}.a{i}", start))
        prev = f"{name}.s{i}"
    nodes.append(plain(f"{name}.action", [prev], _identity))
    return Scm(nodes, name=name)


def _identity(x):
    return x


__all__ = [
    "BicycleTyres", "CandidateOutcome", "ControllerGains", "FwdCarSpec", "PlannerConfig",
    "RewardWeights", "build_full_control_scm", "build_fwd_car_scm", "build_greedy_planner_scm",
    "build_motor_controller_scm", "build_steer_controller_scm", "candidate_actions", "clamp",
    "kinematic_rollout", "outcome_rows", "reward", "schedule_scm", "select_best", "wrap_angle",
]
