"""Explicit window-graph roll-out, used as an oracle for the recursive engine.

Every variable is replicated once per step. Previous-time-step nodes become
edges to the preceding replica, seeded buffers become leaves and everything
else keeps its same-step parents. The unrolled graph is acyclic, so values
follow from a plain topological pass with no temporal machinery at all.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import networkx as nx

from .scm import (
    EndogenousVariable,
    EvaluationContext,
    ExogenousVariable,
    Scm,
    SocketVariable,
    UnseededError,
    VariableKind,
    evaluate,
    sample_exogenous,
)
from .values import max_abs_diff, source_union, to_jsonable


class _Undefined:
    def __repr__(self):
        return "UNDEFINED"


UNDEFINED = _Undefined()


@dataclass
class WindowRollout:
    horizon: int
    core_variables: tuple
    graph: nx.DiGraph
    seeds: dict

    @property
    def replica_count(self) -> int:
        return self.graph.number_of_nodes()


def rollout_window_graph(scm: Scm, horizon: int,
                         seeds: Mapping[tuple[str, int], Any] | None = None) -> WindowRollout:
    """Unroll ``scm`` over steps ``0..horizon``.

    ``seeds`` maps ``(buffer_id, step)`` to a pre-populated value.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    seeds = dict(seeds or {})
    g = nx.DiGraph()
    for k in range(horizon + 1):
        for vid in scm:
            g.add_node((vid, k))
    for k in range(horizon + 1):
        for vid, var in scm.variables.items():
            node = (vid, k)
            kind = getattr(var, "kind", None)
            if kind is VariableKind.PTS:
                if k > 0:
                    g.add_edge((var.parents[0], k - 1), node)
            elif kind is VariableKind.BUFFER and (vid, k) in seeds:
                continue
            else:
                for p in var.parents:
                    g.add_edge((p, k), node)
    return WindowRollout(horizon, tuple(scm), g, seeds)


def rollout_values(scm: Scm, rollout: WindowRollout, step_size: float,
                   rng_seed: int = 0) -> dict:
    """Value of every replica; replicas that need an unseeded past are UNDEFINED."""
    values: dict = {}
    draw_ctx = EvaluationContext(step_size, rng_seed)
    for node in nx.topological_sort(rollout.graph):
        vid, k = node
        var = scm[vid]
        values[node] = _replica_value(var, k, values, rollout, step_size, draw_ctx)
    return values


def _replica_value(var, k, values, rollout, dt, draw_ctx):
    if isinstance(var, SocketVariable) and var.bound_parent is not None:
        return values[(var.bound_parent, k)]
    if isinstance(var, (SocketVariable, ExogenousVariable)):
        draw_ctx.step = k
        return sample_exogenous(draw_ctx, var)
    assert isinstance(var, EndogenousVariable)
    kind = var.kind
    if kind is VariableKind.PTS:
        return values[(var.parents[0], k - 1)] if k > 0 else UNDEFINED
    if kind is VariableKind.BUFFER:
        if (var.id, k) in rollout.seeds:
            return rollout.seeds[(var.id, k)]
        return values[(var.parents[0], k)]
    if kind is VariableKind.TIME_CONDITIONAL:
        chosen = var.parents[0] if k * dt < var.spec.threshold - 1e-6 * dt else var.parents[1]
        return values[(chosen, k)]
    args = [values[(p, k)] for p in var.parents]
    if any(a is UNDEFINED for a in args):
        return UNDEFINED
    if kind is VariableKind.PLAIN:
        return var.equation(*args)
    if kind is VariableKind.TSSP:
        return args[0] * dt
    if kind is VariableKind.TSSQ:
        return args[0] / dt
    if kind is VariableKind.TCTD:
        return args[0] - k * dt
    if kind is VariableKind.UNION:
        return source_union(*args)
    raise ValueError(f"unknown variable kind {kind}")


@dataclass
class EquivalenceReport:
    horizon: int
    max_abs_error: float = 0.0
    entries: list = field(default_factory=list)
    definedness_mismatches: list = field(default_factory=list)

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_abs_error <= tol and not self.definedness_mismatches

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "max_abs_error": to_jsonable(self.max_abs_error),
            "definedness_mismatches": [list(m) for m in self.definedness_mismatches],
            "per_variable": [
                {"id": vid, "step": k, "engine_value": to_jsonable(e),
                 "oracle_value": to_jsonable(o)}
                for vid, k, e, o in self.entries
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def check_rollout_equivalence(scm: Scm, horizon: int, seed: int = 0, step_size: float = 1.0,
                              seeds: Mapping[tuple[str, int], Any] | None = None,
                              ) -> EquivalenceReport:
    """Evaluate every variable at every step with the engine and with the roll-out."""
    seeds = dict(seeds or {})
    rollout = rollout_window_graph(scm, horizon, seeds)
    oracle = rollout_values(scm, rollout, step_size, seed)
    ctx = EvaluationContext(step_size, seed)
    for (vid, k), value in seeds.items():
        ctx.commit(vid, k, value)
    report = EquivalenceReport(horizon)
    for k in range(horizon + 1):
        ctx.step = k
        for vid in scm:
            try:
                got = evaluate(scm, vid, ctx)
            except UnseededError:
                got = UNDEFINED
            want = oracle[(vid, k)]
            if (got is UNDEFINED) != (want is UNDEFINED):
                report.definedness_mismatches.append((vid, k))
                continue
            if got is UNDEFINED:
                continue
            err = max_abs_diff(got, want)
            if math.isnan(err):
                err = math.inf
            report.max_abs_error = max(report.max_abs_error, err)
            report.entries.append((vid, k, got, want))
    return report
