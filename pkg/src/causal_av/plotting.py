"""Top-down scene and speed plots rendered to byte-stable SVG."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure
from matplotlib.patches import Polygon

from .geometry import RoadGeometry, make_obb

_PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#e377c2", "#7f7f7f")
_STYLE = {"svg.hashsalt": "causal-av", "svg.fonttype": "none", "font.size": 9}


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float
    length: float
    width: float
    color: str


@dataclass
class SceneFrame:
    time: float
    poses: dict  # agent id -> Pose
    annotations: dict = field(default_factory=dict)  # "collisions": [(a, b)], "headways": {...}


def agent_color(agent_id: int, color: str | None = None) -> str:
    return color or _PALETTE[(agent_id - 1) % len(_PALETTE)]


def frames_from_result(result) -> list[SceneFrame]:
    """One frame per grid step of a simulation result."""
    scene = result.scene
    frames = []
    for rec in result.records:
        poses = {}
        for aid, s in sorted(rec.states.items()):
            cfg = scene.agents[aid].config
            poses[aid] = Pose(s["pos"][0], s["pos"][1], s["rot"], cfg.length, cfg.width,
                              agent_color(aid, cfg.color))
        hits = sorted(p for p, (overlap, _) in rec.contacts.items() if overlap)
        frames.append(SceneFrame(rec.step * scene.step_size, poses,
                                 {"collisions": hits, "headways": dict(rec.headways)}))
    return frames


def _render(fig: Figure) -> str:
    buf = io.StringIO()
    with matplotlib.rc_context(_STYLE):
        FigureCanvasSVG(fig).print_svg(buf, metadata={"Date": None})
    return buf.getvalue()


def scene_svg(frames: list[SceneFrame], road: RoadGeometry | None = None, title: str = "",
              snapshot_every: float = 1.0) -> str:
    """Paths of every agent with boxes every ``snapshot_every`` seconds.

    The final frame is drawn solid, earlier snapshots faded; frames where two
    boxes first touch get a black cross at the midpoint.
    """
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(10, 2.2))
        ax = fig.add_subplot(1, 1, 1)
        ax.set_aspect("equal")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        if title:
            ax.set_title(title)
        if not frames:
            return _render(fig)
        xs = [p.x for f in frames for p in f.poses.values()]
        x_lo, x_hi = min(xs) - 10.0, max(xs) + 10.0
        if road is not None:
            lo, hi = road.bounds
            edges = sorted({round(ln.center + s * ln.width / 2, 9) for ln in road.lanes
                            for s in (-1, 1)})
            for y in edges:
                solid = math.isclose(y, lo) or math.isclose(y, hi)
                ax.plot([x_lo, x_hi], [y, y], color="#444444", lw=1.0 if solid else 0.6,
                        ls="-" if solid else "--")
        paths: dict = {}
        for f in frames:
            for aid, p in f.poses.items():
                paths.setdefault(aid, ([], [], p.color))
                paths[aid][0].append(p.x)
                paths[aid][1].append(p.y)
        for aid in sorted(paths):
            px, py, color = paths[aid]
            ax.plot(px, py, color=color, lw=0.8, alpha=0.7, label=f"agent {aid}")
        dt = frames[1].time - frames[0].time if len(frames) > 1 else 1.0
        every = max(1, int(round(snapshot_every / dt)))
        for i, f in enumerate(frames):
            last = i == len(frames) - 1
            if i % every and not last:
                continue
            for aid in sorted(f.poses):
                p = f.poses[aid]
                box = make_obb((p.x, p.y), p.length, p.width, p.heading)
                ax.add_patch(Polygon([tuple(c) for c in box.corners()], closed=True,
                                     facecolor=p.color, edgecolor="black", lw=0.4,
                                     alpha=0.9 if last else 0.2))
        touching: set = set()
        for f in frames:
            now = set(f.annotations.get("collisions", ()))
            for a, b in sorted(now - touching):
                if a in f.poses and b in f.poses:
                    pa, pb = f.poses[a], f.poses[b]
                    ax.plot([(pa.x + pb.x) / 2], [(pa.y + pb.y) / 2], marker="x", color="black",
                            ms=6)
            touching = now
        ax.set_xlim(x_lo, x_hi)
        if road is not None:
            lo, hi = road.bounds
            ax.set_ylim(lo - 1.0, hi + 1.0)
        ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.6), ncol=max(1, len(paths)),
                  fontsize=7, frameon=False)
        fig.tight_layout()
        return _render(fig)


def speed_svg(worlds: dict, title: str = "") -> str:
    """Speed against time per agent; ``worlds`` maps a label to a list of frames."""
    styles = ("-", "--", ":", "-.")
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(6, 3))
        ax = fig.add_subplot(1, 1, 1)
        ax.set_xlabel("t (s)")
        ax.set_ylabel("speed (m/s)")
        if title:
            ax.set_title(title)
        for w, label in enumerate(sorted(worlds)):
            frames = worlds[label]
            series: dict = {}
            for prev, cur in zip(frames, frames[1:]):
                h = cur.time - prev.time
                for aid, p in cur.poses.items():
                    q = prev.poses.get(aid)
                    if q is None:
                        continue
                    series.setdefault(aid, ([], [], p.color))
                    series[aid][0].append(cur.time)
                    series[aid][1].append(math.hypot(p.x - q.x, p.y - q.y) / h)
            for aid in sorted(series):
                t, v, color = series[aid]
                ax.plot(t, v, color=color, ls=styles[w % len(styles)], lw=1.0,
                        label=f"{label}: agent {aid}")
        if worlds:
            ax.legend(fontsize=6, frameon=False)
        fig.tight_layout()
        return _render(fig)
