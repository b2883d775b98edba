"""Random model generators shared by the property tests and the acceptance suite."""
from __future__ import annotations

import math
import operator

import numpy as np

from causal_av.composition import ModelTimeline, create_chain
from causal_av.scenario import scenario_from_dict
from causal_av.scm import (
    Degenerate,
    Gaussian,
    Linear,
    Scm,
    Uniform,
    buffer,
    const,
    exogenous,
    plain,
    pts,
    socket,
    tctd,
    time_conditional,
    tssp,
    tssq,
)
from causal_av.values import M_S, M_S2, S, as_source_set


def kinematics_model() -> Scm:
    """a -> dv -> v with the previous velocity fed back through a PTS node."""
    return Scm([
        const("a", 1.0, unit=M_S2),
        tssp("dv", "a"),
        pts("prev_v", "v_buff"),
        plain("v", ["prev_v", "dv"], operator.add, unit=M_S),
        buffer("v_buff", "v"),
    ], name="kinematics")


def random_linear_scm(seed: int, step_size: float = 1.0) -> tuple[Scm, dict]:
    """Random temporal SCM with linear equations and stable feedback loops.

    Returns the model and the buffer seeds needed at step 0.
    """
    rng = np.random.default_rng(seed)
    nodes = []
    seeds = {}
    pool = []
    for i in range(int(rng.integers(1, 3))):
        vid = f"u{i}"
        dist = Gaussian(0.0, 1.0) if rng.random() < 0.5 else Uniform(-1.0, 1.0)
        nodes.append(exogenous(vid, dist))
        pool.append(vid)
    nodes.append(const("c", float(rng.normal())))
    pool.append("c")
    nodes.append(const("goal", float(rng.integers(0, 10)) * step_size, unit=S))
    nodes.append(tctd("ttg", "goal"))
    pool.append("ttg")
    n = int(rng.integers(3, 7))
    for i in range(n):
        x = f"x{i}"
        feedback = rng.random() < 0.6
        picks = list(rng.choice(pool, size=min(len(pool), int(rng.integers(1, 3))), replace=False))
        # keep at most one hidden exogenous parent per variable
        exo = [p for p in picks if p.startswith("u")]
        picks = [p for p in picks if not p.startswith("u")] + exo[:1]
        parents = list(picks)
        coeffs = [float(rng.uniform(-0.8, 0.8)) for _ in parents]
        if feedback:
            nodes.append(pts(f"{x}_prev", f"{x}_buff"))
            parents.append(f"{x}_prev")
            coeffs.append(float(rng.uniform(-0.9, 0.9)))
            seeds[(f"{x}_buff", 0)] = float(rng.normal())
        nodes.append(plain(x, parents, Linear(tuple(coeffs), float(rng.normal()))))
        nodes.append(buffer(f"{x}_buff", x))
        pool.append(x)
        r = rng.random()
        if r < 0.25:
            nodes.append(tssp(f"{x}_p", x))
            pool.append(f"{x}_p")
        elif r < 0.5:
            nodes.append(tssq(f"{x}_q", x))
            pool.append(f"{x}_q")
        elif r < 0.75 and len(pool) > 2:
            other = str(rng.choice(pool[:-1]))
            theta = float(rng.integers(0, 20)) * step_size
            nodes.append(time_conditional(f"{x}_tc", x, other, theta))
            pool.append(f"{x}_tc")
    return Scm(nodes, name=f"linear{seed}"), seeds


def random_scm_pair(seed: int) -> tuple[Scm, Scm, list]:
    """Two disjoint models and random cross bindings of b's sockets to a's outputs
    (and vice versa)."""
    rng = np.random.default_rng(seed)

    def side(tag: str, k_sockets: int) -> Scm:
        nodes = [exogenous(f"{tag}.u", Gaussian(0.0, 1.0))]
        names = [f"{tag}.u"]
        for j in range(k_sockets):
            dist = Degenerate(float(j)) if rng.random() < 0.5 else Uniform(0.0, 1.0)
            nodes.append(socket(f"{tag}.s{j}", dist))
            names.append(f"{tag}.s{j}")
        for j in range(int(rng.integers(1, 5))):
            ps = list(rng.choice(names, size=min(len(names), 2), replace=False))
            ps = [p for p in ps if p != f"{tag}.u"] or [names[-1]]
            nodes.append(plain(f"{tag}.v{j}", ps, Linear(tuple(1.0 for _ in ps))))
            names.append(f"{tag}.v{j}")
        return Scm(nodes, name=tag)

    a = side("A", int(rng.integers(0, 3)))
    b = side("B", int(rng.integers(1, 4)))
    bindings = []
    for sid in sorted(b.sockets):
        if rng.random() < 0.7:
            provider = str(rng.choice(sorted(a.endogenous)))
            bindings.append((sid, provider))
    for sid in sorted(a.sockets):
        if rng.random() < 0.4:
            provider = str(rng.choice(sorted(b.endogenous)))
            bindings.append((sid, provider))
    return a, b, bindings


def chain_base(step_size: float = 1.0):
    """A sink reading one socket, wrapped in an empty input-set chain."""
    base = Scm([socket("sink.in"), plain("sink", ["sink.in"], as_source_set)], name="sink")
    return create_chain(base, "ch", "sink.in", step_size)


def random_timeline(seed: int, steps: int = 50, step_size: float = 1.0) -> ModelTimeline:
    """Timeline where agents appear at random, are refreshed while alive and
    drop out for good by missing a refresh."""
    rng = np.random.default_rng(seed)
    tl = ModelTimeline(chain_base(step_size), ("sink",), rng_seed=seed)
    alive: list[int] = []
    next_id = 1
    for _ in range(steps):
        keep = [sid for sid in alive if rng.random() < 0.85]
        new = []
        for _ in range(int(rng.integers(0, 3)) if rng.random() < 0.4 else 0):
            dist = Gaussian(0.0, 1.0) if rng.random() < 0.5 else Degenerate(float(rng.integers(3)))
            new.append((exogenous(f"src{next_id}", dist), next_id))
            next_id += 1
        tl.advance(introduce=new, refresh=keep)
        alive = keep + [sid for _, sid in new]
    return tl


def solo_scenario(v0: float, goal: float, speed_dur: float, goal_lane: int = 1,
                  lane_dur: float = 4.0, horizon: float | None = None, step_size: float = 0.04):
    """One car on a two-lane road with a single action starting at 0.4 s."""
    if horizon is None:
        horizon = math.ceil((1.4 + max(speed_dur, lane_dur)) / step_size) * step_size
    return scenario_from_dict({
        "name": "solo", "step_size": step_size, "horizon": round(horizon, 6),
        "road": {"lanes": [{"lane_id": 1, "center": 0.0, "width": 3.5},
                           {"lane_id": 2, "center": 3.5, "width": 3.5}]},
        "agents": [{"id": 1, "lane": 1, "x": 0.0, "speed": v0, "actions": [
            {"start": 0.4, "goal_speed": goal, "goal_lane": goal_lane,
             "speed_duration": speed_dur, "lane_duration": lane_dur, "label": "go"}]}],
    })
