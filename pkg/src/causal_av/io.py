"""Trajectory tables, scenario files, DOT graphs and delimited output."""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .scenario import ScenarioConfig, ScenarioError, scenario_from_dict
from .scm import EndogenousVariable, ExogenousVariable, Scm, SocketVariable, VariableKind
from .values import to_jsonable

TRAJECTORY_COLUMNS = ("frame", "agent_id", "x", "y", "vx", "vy", "ax", "ay", "width", "length",
                      "lane_id")
OPTIONAL_COLUMNS = ("time", "heading", "yaw_rate")
TRAJECTORY_UNITS = {
    "frame": "", "agent_id": "", "x": "m", "y": "m", "vx": "m/s", "vy": "m/s", "ax": "m/s^2",
    "ay": "m/s^2", "width": "m", "length": "m", "lane_id": "", "time": "s", "heading": "rad",
    "yaw_rate": "rad/s",
}
_INT_COLUMNS = ("frame", "agent_id", "lane_id")


def fixture_path(name: str) -> Path:
    """Path of a bundled scenario or trajectory file."""
    return Path(str(resources.files("causal_av") / "data" / name))


# -- trajectories ----------------------------------------------------------------------


def validate_trajectories(df: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in TRAJECTORY_COLUMNS if c not in df.columns]
    if missing:
        raise ScenarioError(f"trajectory table is missing column(s) {missing}")
    cols = list(TRAJECTORY_COLUMNS) + [c for c in OPTIONAL_COLUMNS if c in df.columns]
    df = df[cols].copy()
    if df.isna().any().any():
        bad = df[df.isna().any(axis=1)].iloc[0]
        raise ScenarioError(f"NaN value in trajectory row frame={bad['frame']} "
                            f"agent={bad['agent_id']}")
    for c in _INT_COLUMNS:
        vals = df[c].to_numpy(dtype=float)
        if not np.all(vals == np.round(vals)):
            raise ScenarioError(f"column {c!r} must hold integers")
        df[c] = vals.astype(np.int64)
    for c in cols:
        if c not in _INT_COLUMNS:
            df[c] = df[c].astype(float)
    if df.duplicated(["agent_id", "frame"]).any():
        row = df[df.duplicated(["agent_id", "frame"])].iloc[0]
        raise ScenarioError(f"agent {row['agent_id']}: duplicate frame {row['frame']}")
    df = df.sort_values(["agent_id", "frame"], kind="mergesort").reset_index(drop=True)
    for aid, grp in df.groupby("agent_id", sort=True):
        frames = grp["frame"].to_numpy()
        gaps = np.nonzero(np.diff(frames) != 1)[0]
        if len(gaps):
            raise ScenarioError(f"agent {aid}: frames are not contiguous after frame "
                                f"{frames[gaps[0]]} (next is {frames[gaps[0] + 1]})")
    df.attrs["units"] = {c: TRAJECTORY_UNITS[c] for c in cols}
    return df


def load_trajectories(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise ScenarioError(f"cannot read trajectories {path}: {exc}") from None
    return validate_trajectories(df)


def trajectories_frame(rows) -> pd.DataFrame:
    return validate_trajectories(pd.DataFrame(list(rows)))


def write_trajectories(df_or_rows, path=None) -> str:
    """CSV text with shortest round-trip float formatting; also written to ``path``."""
    df = df_or_rows if isinstance(df_or_rows, pd.DataFrame) else trajectories_frame(df_or_rows)
    text = df.to_csv(index=False, lineterminator="\n", float_format=None)
    if path is not None:
        Path(path).write_text(text)
    return text


# -- scenarios -------------------------------------------------------------------------


def load_scenario(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from None
    return scenario_from_dict(data)


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows, columns=None) -> str:
    rows = list(rows)
    df = pd.DataFrame(rows, columns=columns)
    return df.to_csv(index=False, lineterminator="\n")


# -- DOT -------------------------------------------------------------------------------

NODE_STYLE = {
    VariableKind.PLAIN: 'shape=box',
    VariableKind.PTS: 'shape=box, style=rounded, peripheries=2',
    VariableKind.TSSP: 'shape=box, style=filled, fillcolor="#dde8f6"',
    VariableKind.TSSQ: 'shape=box, style=filled, fillcolor="#f6e3dd"',
    VariableKind.TCTD: 'shape=hexagon',
    VariableKind.TIME_CONDITIONAL: 'shape=diamond',
    VariableKind.BUFFER: 'shape=cylinder',
    VariableKind.UNION: 'shape=invtriangle',
}
SOCKET_STYLE = 'shape=doublecircle'
EXOGENOUS_STYLE = 'shape=ellipse, style=dashed'


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def node_style(var) -> str:
    if isinstance(var, SocketVariable):
        return SOCKET_STYLE
    if isinstance(var, ExogenousVariable):
        return EXOGENOUS_STYLE
    assert isinstance(var, EndogenousVariable)
    return NODE_STYLE[var.kind]


def export_dot(scm: Scm, name: str | None = None) -> str:
    """Typed DOT graph; node and edge order are sorted so output is byte-stable."""
    lines = [f"digraph {_q(name or scm.name)} {{", "  rankdir=LR;",
             '  node [fontname="Helvetica", fontsize=10];']
    for vid in sorted(scm):
        var = scm[vid]
        label = var.display_name if var.label else vid
        lines.append(f"  {_q(vid)} [label={_q(label)}, {node_style(var)}];")
    for parent, child in sorted(scm.edges()):
        var = scm[child]
        attrs = ""
        if isinstance(var, EndogenousVariable) and var.kind is VariableKind.PTS:
            attrs = ' [style=dashed, label="t-1"]'
        elif isinstance(var, SocketVariable):
            attrs = " [style=bold]"
        lines.append(f"  {_q(parent)} -> {_q(child)}{attrs};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def dot_shape_counts(dot: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for line in dot.splitlines():
        if "shape=" in line and "->" not in line:
            shape = line.split("shape=", 1)[1].split(",")[0].split("]")[0].strip()
            counts[shape] = counts.get(shape, 0) + 1
    return counts


def finite_or_none(x: float):
    return x if math.isfinite(x) else None
