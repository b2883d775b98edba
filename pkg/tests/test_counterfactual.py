import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from causal_av.counterfactual import (
    DIFFERENT_HARM,
    NECESSARY,
    NOT_NECESSARY,
    VERDICTS,
    AttributionError,
    CandidateCause,
    CollisionEvent,
    but_for_attribute,
    candidates_from_config,
    check_coverage,
    default_candidates,
    factual_from_simulation,
    null_action,
    replay_factual,
    resolve_candidate,
    run_counterfactual,
    same_collision,
    splice_counterfactual,
    verdict_for,
)
from causal_av.io import fixture_path, load_scenario, load_trajectories
from causal_av.scenario import CandidateSpec, ScenarioError, scenario_from_dict
from causal_av.scene import build_scene, simulate
from causal_av.values import Action

ROAD = {"lanes": [{"lane_id": 1, "center": 0.0, "width": 3.5, "direction": 1},
                  {"lane_id": 2, "center": 3.5, "width": 3.5, "direction": -1}]}


@pytest.fixture(scope="module")
def merge_record():
    cfg = load_scenario(fixture_path("merge.json"))
    return replay_factual(cfg, load_trajectories(fixture_path("merge_trajectories.csv")))


def _head_on(horizon=4.0):
    return scenario_from_dict({
        "name": "head-on", "step_size": 0.04, "horizon": horizon, "road": ROAD,
        "agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 10.0},
                   {"id": 2, "lane": 1, "x": 50.0, "speed": 10.0, "heading": math.pi}],
    })


def test_replay_reads_back_observations_exactly():
    cfg = load_scenario(fixture_path("overtake.json"))
    observed = simulate(build_scene(cfg)).trajectory_rows()
    record = replay_factual(cfg, observed)
    assert record.result.trajectory_rows() == observed


def test_replay_from_csv_matches_shipped_table(merge_record):
    table = load_trajectories(fixture_path("merge_trajectories.csv"))
    replayed = sorted(merge_record.result.trajectory_rows(),
                      key=lambda r: (r["agent_id"], r["frame"]))
    for col in ("x", "y", "vx", "vy"):
        assert [r[col] for r in replayed] == list(table[col])


def test_late_entry_sets_link_gates():
    cfg = scenario_from_dict({
        "name": "late", "step_size": 0.04, "horizon": 4.0, "road": ROAD,
        "agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 10.0},
                   {"id": 2, "lane": 1, "x": 40.0, "speed": 10.0, "entry": 2.0}],
    })
    scene = build_scene(cfg)
    for me, other in ((1, 2), (2, 1)):
        link = scene.chains[me].link(other)
        assert link.theta_alpha == 2.0 and link.theta_omega == 4.0
    assert scene.chains["world"].link(2).theta_alpha == 2.0


def test_coverage_errors():
    cfg = _head_on(1.0)
    scene = build_scene(cfg)
    rows = simulate(scene).trajectory_rows()
    with pytest.raises(ScenarioError, match="off the"):
        check_coverage(scene, [{**rows[0], "time": 0.01}] + rows[1:])
    with pytest.raises(ScenarioError, match="frame 3"):
        check_coverage(scene, [r for r in rows if not (r["agent_id"] == 2 and r["frame"] == 3)])
    with pytest.raises(ScenarioError, match="agent 9"):
        check_coverage(scene, rows + [{**rows[0], "agent_id": 9}])


def test_forced_head_on_single_event_on_grid():
    record = factual_from_simulation(_head_on())
    events = record.outcome.collisions
    assert len(events) == 1 and events[0].pair == (1, 2)
    k = round(events[0].time / 0.04)
    assert events[0].time == k * 0.04
    # gap 50 - 4.5 closed at about 20 m/s
    assert events[0].time == pytest.approx(45.5 / 20.0, abs=0.1)
    assert events[0].closing_speed == pytest.approx(20.0, abs=0.5)


def test_no_contact_gives_empty_list_and_finite_headway():
    cfg = scenario_from_dict({
        "name": "follow", "step_size": 0.04, "horizon": 2.0, "road": ROAD,
        "agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 10.0},
                   {"id": 2, "lane": 1, "x": 30.0, "speed": 10.0}],
    })
    record = factual_from_simulation(cfg)
    assert record.outcome.collisions == []
    assert record.outcome.min_headways[(1, 2)] == pytest.approx(30.0 - 4.5, abs=0.1)
    with pytest.raises(AttributionError):
        but_for_attribute(record, [])


def test_divergence_beyond_horizon_changes_nothing(merge_record):
    act = merge_record.scene.agents[3].schedule[-1][1]
    late = CandidateCause(3, act, merge_record.horizon + 1.0, label="late")
    world = run_counterfactual(merge_record, late)
    assert world.result.ctx.buffer_store == merge_record.ctx.buffer_store


def test_pre_divergence_state_is_shared(merge_record):
    cand = resolve_candidate(merge_record.scene, CandidateSpec(3, "merge"))
    world = run_counterfactual(merge_record, cand)
    s = round(cand.start_time / 0.04)
    fact, cf = merge_record.ctx, world.result.ctx
    for key, value in fact.exo_cache.items():
        if key[1] < s:
            assert cf.exo_cache[key] == value
    for key, value in fact.buffer_store.items():
        if key[1] < s:
            assert cf.buffer_store[key] == value
    # and the worlds do diverge afterwards
    y_f = fact.buffer_store[("a3.pos_buff", s + 50)].y
    y_c = cf.buffer_store[("a3.pos_buff", s + 50)].y
    assert y_c == pytest.approx(3.5, abs=0.05) and y_f < 3.0


def test_null_action_holds_lane_and_speed(merge_record):
    act = null_action(merge_record, 3, 0.8)
    assert act.goal_lane == 2 and act.goal_speed == pytest.approx(15.0, abs=0.05)
    assert act.speed_goal_time == 0.8 and act.label == "null"


def test_splice_structure(merge_record):
    cand = resolve_candidate(merge_record.scene, CandidateSpec(3, "merge"))
    scm = splice_counterfactual(merge_record, cand).scm
    assert scm["a3.motor.action"].bound_parent == "a3.cf_action"
    assert scm["a3.cf_action"].spec.threshold == cand.start_time
    assert "a3.cf_action" not in merge_record.scm
    with pytest.raises(AttributionError):
        splice_counterfactual(merge_record, CandidateCause(7, cand.action, 1.0))
    with pytest.raises(AttributionError):
        splice_counterfactual(merge_record, [cand, cand])


def test_candidate_resolution(merge_record):
    scene = merge_record.scene
    assert resolve_candidate(scene, CandidateSpec(2)).label == "brake"
    with pytest.raises(ScenarioError):
        resolve_candidate(scene, CandidateSpec(9))
    with pytest.raises(ScenarioError):
        resolve_candidate(scene, CandidateSpec(3, "merge", 2.0))
    assert [c.label for c in default_candidates(scene)] == ["brake", "merge"]
    assert [c.label for c in candidates_from_config(scene)] == ["merge", "brake"]


def test_candidate_after_contact_is_not_necessary(merge_record):
    harm = merge_record.outcome.first_collision
    after = CandidateCause(3, Action(15.0, 4.0, 1, 4.0), round(harm.time + 0.2, 2),
                           Action(0.0, 5.0, 2, 5.0), "late")
    at = CandidateCause(3, Action(15.0, 4.0, 1, 4.0), harm.time, Action(0.0, 5.0, 2, 5.0), "at")
    report = but_for_attribute(merge_record, [after, at])
    for v in report.verdicts:
        assert v.verdict == NOT_NECESSARY and not v.precedes_contact
    assert report.precedence_check


def test_report_serialisation_and_jobs(merge_record):
    cands = candidates_from_config(merge_record.scene)
    serial = but_for_attribute(merge_record, cands)
    parallel = but_for_attribute(merge_record, cands, jobs=2)
    assert serial.to_json() == parallel.to_json()
    data = serial.to_dict()
    assert [c["verdict"] for c in data["candidates"]] == [NECESSARY, DIFFERENT_HARM]
    assert "precedence check: pass" in serial.table()


def test_reactive_bystander_replans_after_divergence():
    cfg = scenario_from_dict({
        "name": "bystander", "step_size": 0.04, "horizon": 4.0,
        "road": {"lanes": [{"lane_id": 1, "center": 0.0, "width": 3.5},
                           {"lane_id": 2, "center": 3.5, "width": 3.5}]},
        "agents": [
            {"id": 1, "lane": 1, "x": 0.0, "speed": 20.0, "actions": [
                {"start": 0.4, "goal_speed": 20.0, "goal_lane": 2, "label": "swerve"}]},
            {"id": 2, "lane": 2, "x": 10.0, "speed": 15.0},
            {"id": 3, "lane": 1, "x": 60.0, "speed": 12.0, "reactive": True},
        ],
    })
    record = factual_from_simulation(cfg)
    cand = resolve_candidate(record.scene, CandidateSpec(1, "swerve"))
    world = run_counterfactual(record, cand)
    labels = {rec.states[3]["action"].label for rec in world.result.records[20:]}
    assert any(lbl.startswith("v") for lbl in labels)  # the planner chose these
    factual_labels = {rec.states[3]["action"].label for rec in record.result.records}
    assert factual_labels == {"cruise"}


_events = st.builds(
    CollisionEvent,
    st.integers(0, 250).map(lambda k: k * 0.04),
    st.sampled_from([(1, 2), (1, 3), (2, 3)]),
    st.floats(0, 30),
)


@given(_events, st.lists(_events, max_size=4), st.lists(_events, max_size=4))
def test_verdicts_partition_outcomes(harm, others, cf):
    factual = [harm] + others
    cls, verdict = verdict_for(harm, factual, cf)
    assert verdict in VERDICTS
    matched = any(same_collision(harm, c) for c in cf)
    new = [c for c in cf if not any(same_collision(c, f) for f in factual)]
    assert (verdict == NOT_NECESSARY) == matched
    assert (verdict == DIFFERENT_HARM) == (not matched and bool(new))
    assert (verdict == NECESSARY) == (not matched and not new)
    assert {"not-necessary": "same-collision", "different-harm": "other-collision",
            "necessary": "no-collision"}[verdict] == cls


def test_same_collision_window():
    a = CollisionEvent(3.0, (1, 2), 5.0)
    assert same_collision(a, CollisionEvent(4.0, (1, 2), 1.0))
    assert not same_collision(a, CollisionEvent(4.04, (1, 2), 1.0))
    assert not same_collision(a, CollisionEvent(3.0, (1, 3), 5.0))
