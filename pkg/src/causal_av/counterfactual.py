"""Factual replay, counterfactual splicing and but-for attribution.

A factual record is the assembled scene plus an evaluation context whose
kinematic buffers are seeded from observed trajectories. A counterfactual
world is the same scene with one agent's action source routed through a
time-conditional that switches to a replacement action at the divergence
time; it runs in a fork of the factual context that keeps everything before
the divergence, so pre-divergence exogenous draws are shared.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from .composition import rebind_socket
from .scenario import CandidateSpec, ScenarioConfig, ScenarioError
from .scene import Scene, SimulationResult, build_scene, new_context, simulate, state_seeds
from .scm import EndogenousVariable, EvaluationContext, Scm, add_variables, const, time_conditional
from .values import Action, to_jsonable

SAME_COLLISION_WINDOW = 1.0  # s

NECESSARY = "necessary"
NOT_NECESSARY = "not-necessary"
DIFFERENT_HARM = "different-harm"
VERDICTS = (NECESSARY, NOT_NECESSARY, DIFFERENT_HARM)


class AttributionError(RuntimeError):
    pass


# -- outcomes -------------------------------------------------------------------------


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    pair: tuple
    closing_speed: float

    def to_dict(self) -> dict:
        return {"time": self.time, "pair": list(self.pair), "closing_speed": self.closing_speed}


def same_collision(a: CollisionEvent, b: CollisionEvent,
                   window: float = SAME_COLLISION_WINDOW) -> bool:
    return a.pair == b.pair and abs(a.time - b.time) <= window + 1e-9


@dataclass
class OutcomeSummary:
    collisions: list  # CollisionEvent, sorted by time
    min_headways: dict  # (a, b) -> metres (inf when never behind one another)
    trajectories: dict  # agent id -> [(t, x, y)]

    @property
    def first_collision(self) -> CollisionEvent | None:
        return self.collisions[0] if self.collisions else None

    def to_dict(self) -> dict:
        return {
            "collisions": [c.to_dict() for c in self.collisions],
            "min_headways": [{"pair": list(k), "headway": v}
                             for k, v in sorted(self.min_headways.items())],
        }


def summarize(result: SimulationResult) -> OutcomeSummary:
    """First-contact events, per-pair min headway and position series."""
    dt = result.scene.step_size
    touching: set = set()
    collisions = []
    headways: dict = {}
    traj: dict = {}
    for rec in result.records:
        t = rec.step * dt
        for aid, s in rec.states.items():
            traj.setdefault(aid, []).append((t, s["pos"][0], s["pos"][1]))
        for pair, (overlap, closing) in sorted(rec.contacts.items()):
            if overlap and pair not in touching:
                collisions.append(CollisionEvent(t, pair, float(closing)))
            if overlap:
                touching.add(pair)
            else:
                touching.discard(pair)
        for pair, (hab, hba) in rec.headways.items():
            headways[pair] = min(headways.get(pair, math.inf), float(hab), float(hba))
    collisions.sort(key=lambda c: (c.time, c.pair))
    return OutcomeSummary(collisions, headways, traj)


def classify_outcome(scene: Scene, ctx: EvaluationContext | None = None) -> OutcomeSummary:
    return summarize(simulate(scene, ctx))


# -- factual record -------------------------------------------------------------------


@dataclass
class FactualRecord:
    scene: Scene
    seeded_buffers: dict  # (var, step) -> value
    ctx: EvaluationContext
    result: SimulationResult
    outcome: OutcomeSummary

    @property
    def horizon(self) -> float:
        return self.scene.steps * self.scene.step_size

    @property
    def scm(self) -> Scm:
        return self.scene.scm


def _rows(table) -> list[dict]:
    if hasattr(table, "to_dict"):
        return table.to_dict("records")
    return list(table)


def check_coverage(scene: Scene, rows: Sequence[dict]) -> None:
    dt = scene.step_size
    frames: dict = {}
    for r in rows:
        aid = int(r["agent_id"])
        if aid not in scene.agents:
            raise ScenarioError(f"trajectory agent {aid} is not in the scenario")
        frame = r["frame"]
        if int(frame) != frame:
            raise ScenarioError(f"agent {aid}: frame {frame} is not an integer")
        t = r.get("time")
        if t is not None and not (isinstance(t, float) and math.isnan(t)):
            if abs(float(t) - int(frame) * dt) > 1e-6 * dt:
                raise ScenarioError(f"agent {aid}: time {t} is off the {dt} s grid at frame {frame}")
        frames.setdefault(aid, set()).add(int(frame))
    for aid, h in scene.agents.items():
        have = frames.get(aid, set())
        for k in range(h.entry_step, h.exit_step + 1):
            if k not in have:
                raise ScenarioError(f"agent {aid}: no trajectory sample at frame {k}")


def replay_factual(config: ScenarioConfig, trajectories) -> FactualRecord:
    """Assemble the scene and seed every observed kinematic buffer."""
    scene = build_scene(config)
    rows = _rows(trajectories)
    check_coverage(scene, rows)
    rows = [r for r in rows if scene.agents[int(r["agent_id"])].active(int(r["frame"]))]
    seeds = state_seeds(scene, rows)
    ctx = new_context(scene, seeds)
    result = simulate(scene, ctx)
    return FactualRecord(scene, seeds, ctx, result, summarize(result))


def factual_from_simulation(config: ScenarioConfig) -> FactualRecord:
    """Run the scenario forward and replay its own trajectories as observations."""
    result = simulate(build_scene(config))
    return replay_factual(config, result.trajectory_rows())


# -- candidates -----------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateCause:
    agent: int
    action: Action
    start_time: float
    replacement: Action | None = None  # None: keep the lane and speed held just before
    label: str = ""

    def to_dict(self) -> dict:
        return {"agent": self.agent, "action": self.action.to_dict(),
                "start_time": self.start_time,
                "replacement": None if self.replacement is None else self.replacement.to_dict(),
                "label": self.label}


def resolve_candidate(scene: Scene, spec: CandidateSpec) -> CandidateCause:
    h = scene.agents.get(spec.agent)
    if h is None:
        raise ScenarioError(f"candidate agent {spec.agent} is not in the scenario")
    matches = []
    for start, act in h.schedule:
        if spec.action is not None and act.label != spec.action:
            continue
        if spec.start is not None and abs(start - spec.start) > 1e-6:
            continue
        matches.append((start, act))
    if spec.action is None and spec.start is None:
        matches = [m for m in matches if m[1].label != "cruise"]
    if len(matches) != 1:
        raise ScenarioError(
            f"candidate agent={spec.agent} action={spec.action} start={spec.start} matches "
            f"{len(matches)} scheduled actions")
    start, act = matches[0]
    if not 0 <= start <= scene.steps * scene.step_size + 1e-9:
        raise ScenarioError("candidate start is outside the horizon")
    return CandidateCause(spec.agent, act, start, spec.replacement, act.label or f"a{spec.agent}@{start:g}")


def null_action(record: FactualRecord, agent: int, start: float) -> Action:
    """Keep the lane and longitudinal speed held one step before ``start``."""
    scene = record.scene
    h = scene.agents[agent]
    k = min(h.exit_step, max(h.entry_step, int(round(start / scene.step_size)) - 1))
    store = record.ctx.buffer_store
    vel = store[(h.var("lin_vel_buff"), k)]
    rot = store[(h.var("rot_buff"), k)]
    pos = store[(h.var("pos_buff"), k)]
    v_lon = vel[0] * math.cos(rot) + vel[1] * math.sin(rot)
    lane = scene.config.road.lane_at(pos[1])
    return Action(max(0.0, v_lon), start, lane, start, "null")


def _next_decision(scene: Scene, cand: CandidateCause) -> float:
    later = [s for s, _ in scene.agents[cand.agent].schedule if s > cand.start_time + 1e-9]
    return min(later) if later else math.inf


def splice_counterfactual(record: FactualRecord, candidates: CandidateCause | Sequence[CandidateCause]
                          ) -> Scene:
    """Route each candidate agent's action through a divergence time-conditional.

    Before ``start_time`` the factual action source is used; from it until the
    agent's next scheduled decision the replacement holds; afterwards the
    factual schedule resumes. Reactive agents other than the candidates hand
    control to their planners at the earliest divergence.
    """
    if isinstance(candidates, CandidateCause):
        candidates = [candidates]
    scene = record.scene
    scm = scene.scm
    seen = set()
    for cand in candidates:
        h = scene.agents.get(cand.agent)
        if h is None:
            raise AttributionError(f"candidate agent {cand.agent} is absent")
        if cand.agent in seen:
            raise AttributionError(f"agent {cand.agent} has two candidates")
        seen.add(cand.agent)
        repl = cand.replacement or null_action(record, cand.agent, cand.start_time)
        p = h.prefix
        resume = _next_decision(scene, cand)
        nodes = [const(f"{p}.cf_replacement", repl)]
        if math.isinf(resume):
            nodes.append(time_conditional(f"{p}.cf_action", h.action_src, f"{p}.cf_replacement",
                                          cand.start_time))
        else:
            nodes.append(time_conditional(f"{p}.cf_resume", f"{p}.cf_replacement", h.action_src,
                                          resume))
            nodes.append(time_conditional(f"{p}.cf_action", h.action_src, f"{p}.cf_resume",
                                          cand.start_time))
        scm = add_variables(scm, nodes)
        scm = rebind_socket(scm, h.action_socket, f"{p}.cf_action")
    if candidates:
        diverge = min(c.start_time for c in candidates)
        for aid, h in scene.agents.items():
            if aid in seen or h.planner_action is None:
                continue
            var = scm[h.action_src]
            assert isinstance(var, EndogenousVariable)
            scm = scm.replace_variables(time_conditional(
                h.action_src, var.parents[0], var.parents[1], diverge))
    return scene.with_scm(scm)


@dataclass
class World:
    scene: Scene
    result: SimulationResult
    outcome: OutcomeSummary
    divergence: float


def run_counterfactual(record: FactualRecord, candidates: CandidateCause | Sequence[CandidateCause]
                       ) -> World:
    if isinstance(candidates, CandidateCause):
        candidates = [candidates]
    scene = splice_counterfactual(record, candidates)
    diverge = min((c.start_time for c in candidates), default=math.inf)
    ctx = record.ctx.fork(before_time=diverge)
    result = simulate(scene, ctx)
    return World(scene, result, summarize(result), diverge)


# -- attribution ----------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateVerdict:
    candidate: CandidateCause
    factual_outcome_class: str
    counterfactual_outcome_class: str
    verdict: str
    precedes_contact: bool
    counterfactual_collisions: tuple

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate.to_dict(),
            "factual_outcome_class": self.factual_outcome_class,
            "counterfactual_outcome_class": self.counterfactual_outcome_class,
            "verdict": self.verdict,
            "precedes_contact": self.precedes_contact,
            "counterfactual_collisions": [c.to_dict() for c in self.counterfactual_collisions],
        }


def verdict_for(harm: CollisionEvent, factual: Sequence[CollisionEvent],
                counterfactual: Sequence[CollisionEvent]) -> tuple[str, str]:
    """(counterfactual outcome class, verdict)."""
    if any(same_collision(harm, c) for c in counterfactual):
        return "same-collision", NOT_NECESSARY
    new = [c for c in counterfactual if not any(same_collision(c, f) for f in factual)]
    if new:
        return "other-collision", DIFFERENT_HARM
    return "no-collision", NECESSARY


@dataclass
class AttributionReport:
    scenario: str
    seed: int
    step_size: float
    harm: CollisionEvent
    factual: OutcomeSummary
    verdicts: list = field(default_factory=list)

    @property
    def precedence_check(self) -> bool:
        return all(v.precedes_contact for v in self.verdicts if v.verdict == NECESSARY)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "step_size": self.step_size,
            "harm": self.harm.to_dict(),
            "factual": self.factual.to_dict(),
            "candidates": [v.to_dict() for v in self.verdicts],
            "precedence_check": self.precedence_check,
        }

    def to_json(self) -> str:
        return json.dumps(to_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        head = f"harm: agents {self.harm.pair[0]}-{self.harm.pair[1]} at t={self.harm.time:.2f} s"
        lines = [head, f"{'agent':>5}  {'action':<12} {'start':>6}  {'counterfactual':<16} verdict"]
        for v in self.verdicts:
            c = v.candidate
            lines.append(f"{c.agent:>5}  {c.label:<12} {c.start_time:>6.2f}  "
                         f"{v.counterfactual_outcome_class:<16} {v.verdict}")
        lines.append(f"precedence check: {'pass' if self.precedence_check else 'fail'}")
        return "\n".join(lines) + "\n"


def _assess(record: FactualRecord, cand: CandidateCause) -> CandidateVerdict:
    harm = record.outcome.first_collision
    world = run_counterfactual(record, cand)
    cls, verdict = verdict_for(harm, record.outcome.collisions, world.outcome.collisions)
    dt = record.scene.step_size
    precedes = cand.start_time + dt <= harm.time + 1e-9
    return CandidateVerdict(cand, "collision", cls, verdict, precedes,
                            tuple(world.outcome.collisions))


def but_for_attribute(record: FactualRecord, candidates: Sequence[CandidateCause],
                      jobs: int = 1) -> AttributionReport:
    harm = record.outcome.first_collision
    if harm is None:
        raise AttributionError("the factual world has no collision to attribute")
    if jobs > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            verdicts = list(pool.map(lambda c: _assess(record, c), candidates))
    else:
        verdicts = [_assess(record, c) for c in candidates]
    cfg = record.scene.config
    return AttributionReport(cfg.name, cfg.seed, cfg.step_size, harm, record.outcome, verdicts)


def default_candidates(scene: Scene) -> list[CandidateCause]:
    """Every scheduled decision except the initial cruise actions."""
    out = []
    for aid in sorted(scene.agents):
        for start, act in scene.agents[aid].schedule:
            if act.label == "cruise":
                continue
            out.append(CandidateCause(aid, act, start, None, act.label or f"a{aid}@{start:g}"))
    return out


def candidates_from_config(scene: Scene, specs: Sequence[CandidateSpec] | None = None
                           ) -> list[CandidateCause]:
    specs = scene.config.candidates if specs is None else specs
    if not specs:
        return default_candidates(scene)
    return [resolve_candidate(scene, s) for s in specs]


def four_worlds(record: FactualRecord, a: CandidateCause, b: CandidateCause) -> dict[str, Any]:
    """Collision lists for factual, each single removal and the joint removal."""
    return {
        "factual": record.outcome.collisions,
        "without_a": run_counterfactual(record, a).outcome.collisions,
        "without_b": run_counterfactual(record, b).outcome.collisions,
        "without_both": run_counterfactual(record, [a, b]).outcome.collisions,
    }


__all__ = [
    "AttributionError", "AttributionReport", "CandidateCause", "CandidateVerdict",
    "CollisionEvent", "DIFFERENT_HARM", "FactualRecord", "NECESSARY", "NOT_NECESSARY",
    "OutcomeSummary", "VERDICTS", "World", "but_for_attribute", "candidates_from_config",
    "check_coverage", "classify_outcome", "default_candidates", "factual_from_simulation",
    "four_worlds", "null_action", "replay_factual", "resolve_candidate", "run_counterfactual",
    "same_collision", "splice_counterfactual", "summarize", "verdict_for",
]
