import json

import pandas as pd
import pytest

from causal_av.dynamics import PointMassSpec, build_point_mass_scm
from causal_av.io import (
    dot_shape_counts,
    dumps,
    export_dot,
    fixture_path,
    load_scenario,
    load_trajectories,
    rows_to_csv,
    write_trajectories,
)
from causal_av.plotting import frames_from_result, scene_svg, speed_svg
from causal_av.scenario import (
    ScenarioError,
    parse_candidate,
    scenario_from_dict,
    scenario_to_dict,
)
from causal_av.scene import build_scene, simulate

MINIMAL = {
    "road": {"lanes": [{"lane_id": 1, "center": 0.0, "width": 3.5},
                       {"lane_id": 2, "center": 3.5, "width": 3.5}]},
    "agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 10.0},
               {"id": 2, "lane": 2, "x": 10.0, "speed": 12.0}],
}


def _write(tmp_path, data, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_minimal_scenario_defaults(tmp_path):
    cfg = load_scenario(_write(tmp_path, MINIMAL))
    assert cfg.step_size == 0.04 and cfg.seed == 0 and cfg.horizon == 10.0
    assert [a.id for a in cfg.agents] == [1, 2] and cfg.agent(2).length == 4.5


@pytest.mark.parametrize("patch", [
    {"road": {"lanes": [{"lane_id": 1, "center": 0.0, "width": -3.5}]}},
    {"step_size": 0.0},
    {"horizon": 1.01},
    {"seed": "x"},
    {"bogus": 1},
    {"agents": [{"id": 1, "lane": 9, "x": 0.0, "speed": 1.0}]},
    {"agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 1.0, "entry": 3.0, "exit": 2.0}]},
    {"agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 1.0},
                {"id": 1, "lane": 2, "x": 5.0, "speed": 1.0}]},
    {"agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": 1.0,
                 "actions": [{"start": 0.5, "goal_speed": 2.0, "goal_lane": 1}]}]},
])
def test_invalid_scenarios(tmp_path, patch):
    with pytest.raises(ScenarioError):
        load_scenario(_write(tmp_path, {**MINIMAL, **patch}))


def test_unreadable_scenario(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_scenario_dict_round_trip():
    cfg = load_scenario(fixture_path("merge.json"))
    assert scenario_from_dict(scenario_to_dict(cfg)) == cfg


def test_parse_candidate():
    spec = parse_candidate("agent=2,action=merge,start=3.2")
    assert (spec.agent, spec.action, spec.start) == (2, "merge", 3.2)
    assert parse_candidate("agent=4").action is None
    for bad in ("action=merge", "agent=x", "agent=1,colour=red", "agent"):
        with pytest.raises(ScenarioError):
            parse_candidate(bad)


def _rows():
    cfg = scenario_from_dict({**MINIMAL, "horizon": 1.0})
    return simulate(build_scene(cfg)).trajectory_rows()


def test_trajectory_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    text = write_trajectories(_rows(), path)
    df = load_trajectories(path)
    assert sorted(df["agent_id"].unique()) == [1, 2]
    assert df.attrs["units"]["vx"] == "m/s"
    assert write_trajectories(df) == text
    again = load_trajectories(path)
    pd.testing.assert_frame_equal(df, again)


def test_shipped_trajectories_load():
    df = load_trajectories(fixture_path("merge_trajectories.csv"))
    assert set(df["agent_id"]) == {1, 2, 3}


def test_frame_gap_names_agent_and_frame(tmp_path):
    rows = [r for r in _rows() if not (r["agent_id"] == 2 and r["frame"] == 7)]
    path = tmp_path / "gap.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    with pytest.raises(ScenarioError, match="agent 2.*frame 6"):
        load_trajectories(path)


def test_missing_column_and_nan(tmp_path):
    df = pd.DataFrame(_rows())
    df.drop(columns=["lane_id"]).to_csv(tmp_path / "a.csv", index=False)
    with pytest.raises(ScenarioError, match="lane_id"):
        load_trajectories(tmp_path / "a.csv")
    df.loc[3, "x"] = float("nan")
    df.to_csv(tmp_path / "b.csv", index=False)
    with pytest.raises(ScenarioError, match="NaN"):
        load_trajectories(tmp_path / "b.csv")


def test_point_mass_dot_counts():
    dot = export_dot(build_point_mass_scm(PointMassSpec(1.0), "pm"))
    counts = dot_shape_counts(dot)
    assert counts["cylinder"] == 5 and counts["doublecircle"] == 2
    assert dot == export_dot(build_point_mass_scm(PointMassSpec(1.0), "pm"))
    assert '[style=dashed, label="t-1"]' in dot


def test_svg_outputs_deterministic():
    cfg = scenario_from_dict({**MINIMAL, "horizon": 1.0})
    frames = frames_from_result(simulate(build_scene(cfg)))
    a, b = scene_svg(frames, cfg.road, "x"), scene_svg(frames, cfg.road, "x")
    assert a == b and a.startswith("<?xml")
    assert speed_svg({"f": frames}) == speed_svg({"f": frames})
    empty = scene_svg([])
    assert "<svg" in empty and "</svg>" in empty


def test_json_and_csv_helpers():
    assert dumps({"b": float("inf"), "a": (1, 2)}) == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": "inf"\n}\n'
    assert rows_to_csv([{"a": 1, "b": 2.5}]) == "a,b\n1,2.5\n"
