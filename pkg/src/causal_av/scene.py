"""Assemble a full multi-agent scene SCM and drive it over the time grid.

Per agent: FWD car (rigid body) + entity + motor/steer controllers + an
action source (scheduled actions, optionally a greedy planner). Agents meet
through pairwise links whose outputs enter each entity's input-set chain
between the later entry and the earlier exit of the pair. A scene-wide chain
collects every active agent's :class:`BodyState` for the planners.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

from .composition import (
    InputSetChain,
    create_chain,
    introduce_source,
    merge,
    rebind_socket,
    refresh_source,
)
from .dynamics import (
    PointMassSpec,
    RigidBodySpec,
    build_entity_scm,
    build_link_scm,
    default_drag_coefficient,
)
from .scenario import AgentConfig, ScenarioConfig
from .scm import (
    EMPTY_DIST,
    EvaluationContext,
    Scm,
    VariableKind,
    add_variables,
    const,
    evaluate_many,
    plain,
    socket,
    time_conditional,
)
from .values import Action, Vec2
from .vehicle import (
    FwdCarSpec,
    build_full_control_scm,
    build_fwd_car_scm,
    build_greedy_planner_scm,
    build_motor_controller_scm,
    build_steer_controller_scm,
    schedule_scm,
)

WORLD = "world"


@dataclass(frozen=True)
class AgentHandle:
    id: int
    prefix: str
    config: AgentConfig
    entry_step: int
    exit_step: int
    schedule: tuple  # ((start, Action), ...)
    buffers: tuple  # buffer ids driven every active step
    action_src: str
    action_socket: str
    action_buff: str
    planner_action: str | None

    def var(self, role: str) -> str:
        return f"{self.prefix}.{role}"

    def active(self, step: int) -> bool:
        return self.entry_step <= step <= self.exit_step


@dataclass(frozen=True)
class LinkHandle:
    a: int
    b: int
    prefix: str
    start_step: int
    end_step: int

    def var(self, role: str) -> str:
        return f"{self.prefix}.{role}"

    @property
    def pair(self) -> tuple[int, int]:
        return (self.a, self.b)

    def active(self, step: int) -> bool:
        return self.start_step <= step <= self.end_step


@dataclass
class Scene:
    config: ScenarioConfig
    scm: Scm
    agents: dict
    links: list
    chains: dict = field(default_factory=dict)
    initial_seeds: dict = field(default_factory=dict)

    @property
    def step_size(self) -> float:
        return self.config.step_size

    @property
    def steps(self) -> int:
        return self.config.steps

    def with_scm(self, scm: Scm) -> "Scene":
        return replace(self, scm=scm)

    def time_of(self, step: int) -> float:
        return step * self.config.step_size


def agent_prefix(agent_id: int) -> str:
    return f"a{agent_id}"


def initial_heading(cfg: AgentConfig, config: ScenarioConfig) -> float:
    if cfg.heading is not None:
        return cfg.heading
    return config.road.lane(cfg.lane).heading


def car_spec(cfg: AgentConfig, config: ScenarioConfig) -> FwdCarSpec:
    heading = initial_heading(cfg, config)
    y = cfg.y if cfg.y is not None else config.road.lane(cfg.lane).center
    pm = PointMassSpec(cfg.mass, Vec2(cfg.x, y), Vec2.polar(cfg.speed, heading))
    body = RigidBodySpec(pm, cfg.length, cfg.width, cfg.inertia, seed_rot=heading)
    return FwdCarSpec(body, wheel_radius=cfg.wheel_radius, max_motor_torque=cfg.max_motor_torque,
                      max_steer=cfg.max_steer)


def agent_schedule(cfg: AgentConfig) -> tuple:
    """Initial cruise action at entry followed by the scheduled decisions."""
    sched = []
    first = cfg.actions[0] if cfg.actions else None
    if first is None or first.start > cfg.entry + 1e-9:
        sched.append((cfg.entry, Action(cfg.speed, cfg.entry, cfg.lane, cfg.entry, "cruise")))
    sched.extend((a.start, a.to_action()) for a in cfg.actions)
    return tuple(sched)


def _identity(x):
    return x


def _build_agent(cfg: AgentConfig, config: ScenarioConfig, drag: float) -> tuple[Scm, dict]:
    p = agent_prefix(cfg.id)
    dt = config.step_size
    spec = car_spec(cfg, config)
    car = build_fwd_car_scm(spec, p)
    ent = build_entity_scm(car, p, drag, config.rotational_drag)
    motor_gains = replace(cfg.gains, epsilon=max(cfg.gains.epsilon, dt))
    motor = build_motor_controller_scm(motor_gains, f"{p}.motor", spec.max_motor_torque)
    steer = build_steer_controller_scm(cfg.gains, f"{p}.steerc", config.road, spec.max_steer, dt,
                                       cfg.entry)
    control = build_full_control_scm(motor, steer, f"{p}.motor", f"{p}.steerc", f"{p}.control")
    stack = merge(ent, control, [
        (f"{p}.motor_torque", f"{p}.motor.motor_torque"),
        (f"{p}.steer", f"{p}.steerc.steer"),
        (f"{p}.motor.speed", f"{p}.lin_vel_buff"),
        (f"{p}.motor.dir", f"{p}.dir"),
        (f"{p}.motor.mass", f"{p}.mass"),
        (f"{p}.motor.wheel_radius", f"{p}.wheel_radius"),
        (f"{p}.motor.env_force", f"{p}.env_force_buff"),
        (f"{p}.steerc.pos", f"{p}.pos_buff"),
        (f"{p}.steerc.lin_vel", f"{p}.lin_vel_buff"),
        (f"{p}.steerc.dir", f"{p}.dir"),
    ], key=f"{p}.stack", name=p)
    schedule = agent_schedule(cfg)
    sched = schedule_scm(f"{p}.sched", schedule)
    planner_action = None
    if cfg.reactive:
        planner = build_greedy_planner_scm(cfg.planner, f"{p}.planner", cfg.id, config.road,
                                           schedule[0][1], dt, cfg.entry)
        sched = merge(sched, planner, key=f"{p}.deciders", name=f"{p}.deciders")
        planner_action = f"{p}.planner.action"
        # factual worlds follow the schedule; a splice moves the threshold to the divergence
        src = time_conditional(f"{p}.action_src", f"{p}.sched.action", planner_action, math.inf)
    else:
        src = plain(f"{p}.action_src", [f"{p}.sched.action"], _identity)
    hub = add_variables(sched, [src])
    bindings = [(f"{p}.motor.action", f"{p}.action_src")]
    if cfg.reactive:
        bindings += [(f"{p}.planner.pos", f"{p}.pos_buff"),
                     (f"{p}.planner.last_action", f"{p}.motor.action_buff")]
    agent = merge(stack, hub, bindings, key=f"{p}.agent", name=p)
    buffers = tuple(vid for vid in agent.ids_of_kind(VariableKind.BUFFER)
                    if ".planner." not in vid)
    info = dict(schedule=schedule, buffers=buffers, planner_action=planner_action,
                seeds=spec.seed_values(p))
    return agent, info


def build_scene(config: ScenarioConfig) -> Scene:
    dt = config.step_size
    drag = config.drag_coefficient
    if drag is None:
        drag = default_drag_coefficient()
    scm = Scm([socket(f"{WORLD}.in", EMPTY_DIST, label="agents")], name=config.name)
    agents: dict[int, AgentHandle] = {}
    seeds: dict = {}
    horizon_step = config.steps
    for cfg in config.agents:
        agent_scm, info = _build_agent(cfg, config, drag)
        scm = merge(scm, agent_scm, key=f"{agent_prefix(cfg.id)}.scene", name=config.name)
        entry = int(round(cfg.entry / dt))
        exit_ = horizon_step if cfg.exit is None else min(horizon_step, int(round(cfg.exit / dt)))
        p = agent_prefix(cfg.id)
        agents[cfg.id] = AgentHandle(
            cfg.id, p, cfg, entry, exit_, info["schedule"], info["buffers"], f"{p}.action_src",
            f"{p}.motor.action", f"{p}.motor.action_buff", info["planner_action"])
        for vid, value in info["seeds"].items():
            seeds[(vid, entry)] = value

    # scene-wide set of agent states for the planners
    world = create_chain(scm, WORLD, f"{WORLD}.in", dt)
    for aid, h in agents.items():
        world = introduce_source(world, f"{h.prefix}.state", aid, h.entry_step * dt)
        world = refresh_source(world, aid, h.exit_step * dt)
    scm = world.scm
    for h in agents.values():
        if h.planner_action is not None:
            scm = rebind_socket(scm, f"{h.prefix}.planner.world", f"{WORLD}.in")

    chains: dict[int, InputSetChain] = {}
    for aid, h in agents.items():
        chain = create_chain(scm, f"{h.prefix}.links", f"{h.prefix}.link_in", dt)
        scm = chain.scm
        chains[aid] = chain
    links: list[LinkHandle] = []
    ids = sorted(agents)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            ha, hb = agents[a], agents[b]
            start = max(ha.entry_step, hb.entry_step)
            end = min(ha.exit_step, hb.exit_step)
            if start > end:
                continue
            prefix = f"link.{a}.{b}"
            link = build_link_scm(scm, scm, ha.prefix, hb.prefix, prefix, config.restitution)
            scm = merge(scm, link, [(f"{prefix}.a_state", f"{ha.prefix}.state"),
                                    (f"{prefix}.b_state", f"{hb.prefix}.state")],
                        key=prefix, name=config.name)
            for me, other, out in ((a, b, "out_a"), (b, a, "out_b")):
                chain = replace(chains[me], scm=scm)
                chain = introduce_source(chain, f"{prefix}.{out}", other, start * dt)
                chain = refresh_source(chain, other, end * dt)
                chains[me] = chain
                scm = chain.scm
            links.append(LinkHandle(a, b, prefix, start, end))
    chains = {k: replace(c, scm=None) for k, c in chains.items()}
    chains[WORLD] = replace(world, scm=None)
    return Scene(config, scm, agents, links, chains, seeds)


def new_context(scene: Scene, seeds: dict | None = None, rng_seed: int | None = None
                ) -> EvaluationContext:
    ctx = EvaluationContext(scene.step_size, scene.config.seed if rng_seed is None else rng_seed)
    for (vid, step), value in (scene.initial_seeds if seeds is None else seeds).items():
        ctx.commit(vid, step, value)
    return ctx


# -- simulation -----------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    states: dict  # agent id -> dict of kinematics
    contacts: dict  # (a, b) -> (overlap, closing_speed)
    headways: dict  # (a, b) -> (a->b, b->a)


@dataclass
class SimulationResult:
    scene: Scene
    records: list
    ctx: EvaluationContext

    def trajectory_rows(self) -> list[dict]:
        road = self.scene.config.road
        rows = []
        for rec in self.records:
            for aid in sorted(rec.states):
                s = rec.states[aid]
                cfg = self.scene.agents[aid].config
                rows.append({
                    "frame": rec.step, "agent_id": aid,
                    "x": s["pos"][0], "y": s["pos"][1],
                    "vx": s["vel"][0], "vy": s["vel"][1],
                    "ax": s["acc"][0], "ay": s["acc"][1],
                    "width": cfg.width, "length": cfg.length,
                    "lane_id": road.lane_at(s["pos"][1]),
                    "heading": s["rot"], "yaw_rate": s["ang_vel"],
                })
        return rows


def simulate(scene: Scene, ctx: EvaluationContext | None = None, start_step: int = 0,
             end_step: int | None = None) -> SimulationResult:
    """Evaluate every active agent's buffers and every active link, step by step."""
    ctx = new_context(scene) if ctx is None else ctx
    end_step = scene.steps if end_step is None else end_step
    scm = scene.scm
    records = []
    entry_step = ctx.step
    try:
        for k in range(start_step, end_step + 1):
            ctx.step = k
            active = [h for h in scene.agents.values() if h.active(k)]
            live_links = [ln for ln in scene.links if ln.active(k)]
            targets: list[str] = []
            for h in active:
                targets.extend(h.buffers)
            for ln in live_links:
                targets += [ln.var("contact"), ln.var("impulse"), ln.var("headway_ab"),
                            ln.var("headway_ba")]
            evaluate_many(scm, targets, ctx)
            store = ctx.buffer_store
            states = {}
            for h in active:
                states[h.id] = {
                    "pos": store[(h.var("pos_buff"), k)],
                    "vel": store[(h.var("lin_vel_buff"), k)],
                    "acc": store[(h.var("lin_acc_buff"), k)],
                    "rot": store[(h.var("rot_buff"), k)],
                    "ang_vel": store[(h.var("ang_vel_buff"), k)],
                    "action": store[(h.action_buff, k)],
                    "motor_torque": store.get((h.var("motor_torque_buff"), k)),
                    "steer": store.get((h.var("steer_buff"), k)),
                }
            contacts, headways = {}, {}
            if live_links:
                vals = evaluate_many(scm, [v for ln in live_links for v in (
                    ln.var("contact"), ln.var("impulse"), ln.var("headway_ab"),
                    ln.var("headway_ba"))], ctx)
                for i, ln in enumerate(live_links):
                    contact, imp, hab, hba = vals[4 * i: 4 * i + 4]
                    contacts[ln.pair] = (contact.overlap, imp.closing_speed)
                    headways[ln.pair] = (hab, hba)
            records.append(StepRecord(k, states, contacts, headways))
    finally:
        ctx.step = entry_step
    return SimulationResult(scene, records, ctx)


def state_seeds(scene: Scene, rows) -> dict:
    """Buffer seeds ``{(var, step): value}`` from trajectory rows."""
    seeds = {}
    for r in rows:
        h = scene.agents[int(r["agent_id"])]
        k = int(r["frame"])
        heading = r.get("heading")
        if heading is None or (isinstance(heading, float) and math.isnan(heading)):
            heading = math.atan2(r["vy"], r["vx"]) if math.hypot(r["vx"], r["vy"]) > 1e-6 \
                else initial_heading(h.config, scene.config)
        yaw_rate = r.get("yaw_rate")
        if yaw_rate is None or (isinstance(yaw_rate, float) and math.isnan(yaw_rate)):
            yaw_rate = 0.0
        seeds[(h.var("pos_buff"), k)] = Vec2(float(r["x"]), float(r["y"]))
        seeds[(h.var("lin_vel_buff"), k)] = Vec2(float(r["vx"]), float(r["vy"]))
        seeds[(h.var("lin_acc_buff"), k)] = Vec2(float(r["ax"]), float(r["ay"]))
        seeds[(h.var("rot_buff"), k)] = float(heading)
        seeds[(h.var("ang_vel_buff"), k)] = float(yaw_rate)
    return seeds


def kinematics_scm(name: str = "kin") -> Scm:
    """The one-dimensional a -> dv -> v loop with a PTS feedback edge."""
    from .scm import buffer, pts, tssp
    from .values import M_S, M_S2

    return Scm([
        const(f"{name}.a", 1.0, unit=M_S2),
        tssp(f"{name}.dv", f"{name}.a"),
        pts(f"{name}.prev_v", f"{name}.v_buff"),
        plain(f"{name}.v", [f"{name}.prev_v", f"{name}.dv"], _add, unit=M_S),
        buffer(f"{name}.v_buff", f"{name}.v"),
    ], name=name)


def _add(a, b):
    return a + b


def describe_scene(scene: Scene) -> dict[str, Any]:
    scm = scene.scm
    return {
        "name": scene.config.name,
        "variables": scm.node_count,
        "edges": scm.edge_count,
        "agents": sorted(scene.agents),
        "links": [list(ln.pair) for ln in scene.links],
    }
