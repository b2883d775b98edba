import math

import numpy as np
import pytest

from causal_av.composition import rebind_socket, split
from causal_av.dynamics import BodyState, PointMassSpec, RigidBodySpec
from causal_av.geometry import Lane, RoadGeometry
from causal_av.scenario import scenario_from_dict
from causal_av.scene import build_scene, simulate
from causal_av.scm import (
    EvaluationContext,
    Scm,
    add_variables,
    const,
    evaluate,
    intervene,
    time_conditional,
)
from causal_av.vehicle import (
    BicycleTyres,
    CandidateOutcome,
    ControllerGains,
    FwdCarSpec,
    PlannerConfig,
    RewardWeights,
    build_full_control_scm,
    build_greedy_planner_scm,
    build_motor_controller_scm,
    build_steer_controller_scm,
    candidate_actions,
    outcome_rows,
    reward,
    select_best,
)
from causal_av.values import Action, Vec2, ZERO2, singleton, source_union
from helpers import solo_scenario

ROAD = RoadGeometry((Lane(1, 0.0, 3.5), Lane(2, 3.5, 3.5)))


def _bind(scm: Scm, values: dict) -> Scm:
    """Feed constants into sockets."""
    scm = add_variables(scm, [const(f"in.{k}", v) for k, v in values.items()])
    for k in values:
        scm = rebind_socket(scm, k, f"in.{k}")
    return scm


def test_tyres_straight_line_force():
    tyres = BicycleTyres(0.3, 1.2, 1.5, 1e5, 1e5, 6.0)
    force, yaw = tyres(Vec2(10.0, 0.0), 0.0, 0.0, 300.0, 0.0)
    assert force.x == pytest.approx(1000.0) and force.y == 0.0 and yaw == 0.0


def test_car_spec_validation():
    body = RigidBodySpec(PointMassSpec(1500.0), 4.5, 1.8)
    with pytest.raises(ValueError):
        FwdCarSpec(body, wheelbase=1.0, front_axle_offset=1.2)
    with pytest.raises(ValueError):
        FwdCarSpec(body, max_steer=0.0)
    with pytest.raises(ValueError):
        ControllerGains(k_p=0.0)


def test_motor_torque_arithmetic():
    m = build_motor_controller_scm(ControllerGains(), "mc", 1500.0)
    m = _bind(m, {"mc.action": Action(12.0, 2.0, 1, 2.0), "mc.speed": Vec2(10.0, 0.0),
                  "mc.mass": 1000.0, "mc.wheel_radius": 0.3})
    assert evaluate(m, "mc.motor_torque", EvaluationContext(0.04)) == pytest.approx(300.0)


def test_motor_compensates_drag_at_goal_speed():
    m = build_motor_controller_scm(ControllerGains(), "mc", 1500.0)
    m = _bind(m, {"mc.action": Action(10.0, 2.0, 1, 2.0), "mc.speed": Vec2(10.0, 0.0),
                  "mc.mass": 1000.0, "mc.wheel_radius": 0.3, "mc.env_force": Vec2(-90.0, 0.0)})
    assert evaluate(m, "mc.motor_torque", EvaluationContext(0.04)) == pytest.approx(27.0)


def _steer(pos, vel=Vec2(10.0, 0.0), lane=1):
    s = build_steer_controller_scm(ControllerGains(), "sc", ROAD, 0.5, 0.04)
    return _bind(s, {"sc.action": Action(10.0, 100.0, lane, 100.0), "sc.pos": Vec2(*pos),
                     "sc.lin_vel": vel})


def test_steer_equilibrium_is_exactly_zero():
    s = _steer((5.0, 0.0))
    assert evaluate(s, "sc.steer", EvaluationContext(0.04)) == 0.0


def test_steer_error_for_lateral_offset():
    s = _steer((0.0, -1.0))
    ctx = EvaluationContext(0.04)
    assert evaluate(s, "sc.ang_diff", ctx) == pytest.approx(math.atan(1.0 / 10.0))
    assert evaluate(s, "sc.steer", ctx) > 0.0  # turns left, towards y = 0
    assert evaluate(_steer((0.0, 1.0)), "sc.steer", EvaluationContext(0.04)) < 0.0


def test_full_control_transparent_and_splits():
    motor = build_motor_controller_scm(ControllerGains(), "mc", 1500.0)
    steer = build_steer_controller_scm(ControllerGains(), "sc", ROAD, 0.5, 0.04)
    full = build_full_control_scm(motor, steer, "mc", "sc", "ctl")
    action = Action(12.0, 2.0, 2, 4.0)
    inputs = {"mc.speed": Vec2(10.0, 0.0), "mc.mass": 1000.0, "mc.wheel_radius": 0.3,
              "sc.pos": Vec2(0.0, 0.0), "sc.lin_vel": Vec2(10.0, 0.0)}
    joined = _bind(full, {"mc.action": action, **inputs})
    m_alone = _bind(motor, {"mc.action": action, **{k: v for k, v in inputs.items()
                                                     if k.startswith("mc.")}})
    s_alone = _bind(steer, {"sc.action": action, **{k: v for k, v in inputs.items()
                                                    if k.startswith("sc.")}})
    ctx = EvaluationContext(0.04)
    assert evaluate(joined, "mc.motor_torque", ctx) == evaluate(m_alone, "mc.motor_torque",
                                                                EvaluationContext(0.04))
    assert evaluate(joined, "sc.steer", ctx) == evaluate(s_alone, "sc.steer",
                                                         EvaluationContext(0.04))
    m2, s2 = split(full, "ctl.full_control")
    assert m2.variables == motor.variables and s2.variables == steer.variables


def _speed_at(result, t, agent=1):
    k = int(math.floor(t / result.scene.step_size + 1e-9))
    return result.records[k].states[agent]["vel"].norm()


def test_speed_goals_reached():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        v0, goal = rng.uniform(5.0, 28.0, 2)
        dur = max(1.0, abs(goal - v0) / 2.0) + float(rng.uniform(0.0, 2.0))
        result = simulate(build_scene(solo_scenario(float(v0), float(goal), dur, lane_dur=2.0)))
        worst = max(worst, abs(_speed_at(result, 0.4 + dur) - goal))
        for rec in result.records:
            st = rec.states[1]
            assert abs(st["motor_torque"]) <= 1500.0 and abs(st["steer"]) <= 0.5
    assert worst <= 0.1


def test_lane_change_settles():
    result = simulate(build_scene(solo_scenario(20.0, 20.0, 2.0, goal_lane=2, lane_dur=4.0)))
    k = int(math.floor(4.4 / 0.04 + 1e-9))
    assert all(abs(rec.states[1]["pos"].y - 3.5) <= 0.2 for rec in result.records[k:])


def test_steady_state_yaw_rate():
    scene = build_scene(solo_scenario(10.0, 10.0, 1.0, horizon=12.0))
    scene = scene.with_scm(intervene(scene.scm, "a1.steerc.steer", 0.05))
    st = simulate(scene).records[-1].states[1]
    v = st["vel"].norm()
    assert st["ang_vel"] == pytest.approx(v * 0.05 / 2.7, rel=0.10)


def test_expired_goal_holds_speed():
    result = simulate(build_scene(solo_scenario(12.0, 16.0, 2.0, horizon=8.0)))
    assert all(abs(r.states[1]["vel"].norm() - 16.0) <= 0.1 for r in result.records[100:])


def test_fixed_action_provider_is_tracked():
    scene = build_scene(solo_scenario(15.0, 15.0, 2.0, horizon=8.0))
    scm = add_variables(scene.scm, [const("fixed", Action(22.0, 4.0, 2, 4.0))])
    scm = rebind_socket(scm, "a1.motor.action", "fixed")
    final = simulate(scene.with_scm(scm)).records[-1].states[1]
    assert final["vel"].norm() == pytest.approx(22.0, abs=0.1)
    assert final["pos"].y == pytest.approx(3.5, abs=0.2)


def test_reward_terms():
    still = CandidateOutcome(0, Action(0.0, 1.0, 1, 1.0), 0.0, False, 0.0, 0.0)
    assert reward(still, RewardWeights()) == 0.0
    crash = still._replace(progress=100.0, collided=True)
    assert reward(crash, RewardWeights()) < reward(still, RewardWeights())


def test_select_best_ties_and_order():
    assert select_best([0.8, 0.5]) == 0
    assert select_best([0.5, 0.8]) == 1
    assert select_best([0.5, 0.5, 0.1]) == 0
    with pytest.raises(ValueError):
        select_best([])


def test_argmax_invariant_under_increasing_transforms():
    rng = np.random.default_rng(3)
    transforms = [lambda x: 2.0 * x + 7.0, lambda x: x ** 3, lambda x: math.exp(x / 500.0),
                  lambda x: math.atan(x / 1000.0)]
    for _ in range(500):
        scores = list(rng.choice(np.arange(-400, 400) * 0.5, size=int(rng.integers(1, 30)),
                                 replace=False))
        best = select_best(scores)
        for f in transforms:
            assert select_best([f(s) for s in scores]) == best
        outcomes = [CandidateOutcome(i, Action(10.0, 1.0, 1, 1.0), *rng.uniform(0, 50, 1),
                                     bool(rng.random() < 0.3), *rng.uniform(0, 2, 2))
                    for i in range(len(scores))]
        w = RewardWeights()
        base = select_best([reward(o, w) for o in outcomes])
        assert select_best([reward(o, w.scaled(4.0)) for o in outcomes]) == base


def _planner_choice(ego: BodyState, others):
    cfg = PlannerConfig()
    p = build_greedy_planner_scm(cfg, "pl", 1, ROAD, Action(0.0, 0.0, 1, 0.0), 0.04)
    world = source_union(singleton(1, ego), *[singleton(i + 2, o) for i, o in enumerate(others)])
    p = _bind(p, {"pl.world": world, "pl.pos": ego.pos})
    ctx = EvaluationContext(0.04)
    return evaluate(p, "pl.sim_action_outcomes", ctx), evaluate(p, "pl.action", ctx)


def _body(x, y, vx):
    return BodyState(Vec2(x, y), Vec2(vx, 0.0), 0.0, 0.0, 4.5, 1.8, 1500.0, 3000.0)


def test_collision_dominance_in_dilemmas():
    rng = np.random.default_rng(11)
    mixed = 0
    for _ in range(40):
        ego = _body(0.0, 0.0, float(rng.uniform(15, 25)))
        others = [_body(float(rng.uniform(15, 45)), 0.0, float(rng.uniform(0, 5)))]
        if rng.random() < 0.7:
            others.append(_body(float(rng.uniform(-10, 40)), 3.5, float(rng.uniform(0, 25))))
        outcomes, action = _planner_choice(ego, others)
        chosen = next(o for o in outcomes if o.action == action)
        if any(not o.collided for o in outcomes):
            assert not chosen.collided
            mixed += any(o.collided for o in outcomes)
    assert mixed >= 10


def test_candidate_grid_and_rows():
    ego = _body(0.0, 0.0, 20.0)
    acts = candidate_actions(PlannerConfig(), ego, 1.0, ROAD)
    assert len(acts) == 5 * 2 * 3
    assert acts[0].goal_speed == 18.0 and acts[0].goal_lane == 1 and acts[0].speed_goal_time == 2.0
    outcomes, _ = _planner_choice(ego, [])
    rows = outcome_rows(outcomes, RewardWeights())
    assert rows[0]["candidate_id"] == 0 and set(rows[0]) >= {"total", "collided", "progress"}


def test_planner_keeps_unexpired_action():
    keep = Action(20.0, 5.0, 1, 5.0)
    p = build_greedy_planner_scm(PlannerConfig(), "pl", 1, ROAD, keep, 0.04)
    p = _bind(p, {"pl.world": singleton(1, _body(0, 0, 20.0)), "pl.pos": ZERO2})
    assert evaluate(p, "pl.action", EvaluationContext(0.04)) == keep


def test_planner_in_control_avoids_slow_leader():
    cfg = scenario_from_dict({
        "name": "follow", "step_size": 0.04, "horizon": 6.0,
        "road": {"lanes": [{"lane_id": 1, "center": 0.0, "width": 3.5},
                           {"lane_id": 2, "center": 3.5, "width": 3.5}]},
        "agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 20.0, "reactive": True},
                   {"id": 2, "lane": 1, "x": 40.0, "speed": 5.0}],
    })
    scene = build_scene(cfg)
    # hand the agent to its planner from the start
    src = scene.scm["a1.action_src"]
    planner_from_start = time_conditional("a1.action_src", *src.parents, 0.0)
    scene = scene.with_scm(scene.scm.replace_variables(planner_from_start))
    result = simulate(scene)
    assert not any(ov for rec in result.records for ov, _ in rec.contacts.values())
    labels = {rec.states[1]["action"].label for rec in result.records}
    assert any(lbl.startswith("v") for lbl in labels)
