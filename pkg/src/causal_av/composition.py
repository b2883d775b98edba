"""Joining and separating models, and dynamically sized input sets.

Sockets are exogenous inputs with at most one bound provider. Binding is
reversible, which is what makes :func:`merge` / :func:`split` round-trip.

An :class:`InputSetChain` collects ``(source_id, payload)`` pairs from a
varying number of sources. Each source reaches the set through a pair of
time gates ``[theta_alpha, theta_omega]``; sources outside their window
contribute the empty set, so a model updated at time ``t`` still reproduces
every earlier time step.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from .scm import (
    EMPTY_DIST,
    EvaluationContext,
    ExogenousVariable,
    MergeRecord,
    Scm,
    ScmError,
    SocketVariable,
    Variable,
    add_variables,
    evaluate,
    exogenous,
    plain,
    socket,
    time_conditional,
    union,
)
from .values import singleton, to_jsonable, values_close


class CompositionError(ScmError):
    pass


# -- sockets --------------------------------------------------------------------


def connect_socket(scm: Scm, socket_id: str, provider: str) -> Scm:
    var = scm[socket_id]
    if isinstance(var, ExogenousVariable):
        raise CompositionError(f"{socket_id!r} is a hidden exogenous variable, not a socket")
    if not isinstance(var, SocketVariable):
        raise CompositionError(f"{socket_id!r} is not a socket")
    if var.bound_parent is not None:
        raise CompositionError(
            f"socket {socket_id!r} is already bound to {var.bound_parent!r} (one parent max)"
        )
    if provider not in scm:
        raise CompositionError(f"provider {provider!r} does not exist")
    return scm.replace_variables(replace(var, bound_parent=provider))


def disconnect_socket(scm: Scm, socket_id: str) -> Scm:
    var = scm[socket_id]
    if not isinstance(var, SocketVariable):
        raise CompositionError(f"{socket_id!r} is not a socket")
    if var.bound_parent is None:
        raise CompositionError(f"socket {socket_id!r} is not bound")
    return scm.replace_variables(replace(var, bound_parent=None))


def rebind_socket(scm: Scm, socket_id: str, provider: str) -> Scm:
    var = scm[socket_id]
    if isinstance(var, SocketVariable) and var.bound_parent is not None:
        scm = disconnect_socket(scm, socket_id)
    return connect_socket(scm, socket_id, provider)


# -- merge / split -----------------------------------------------------------------


def merge(a: Scm, b: Scm, bindings: Sequence[tuple[str, str]] = (), key: str | None = None,
          name: str | None = None) -> Scm:
    """Union of two models with sockets bound across them.

    Each binding is ``(socket, provider)`` with the socket in one model and the
    provider in the other. Bound sockets stay sockets; their distributions are
    kept so :func:`split` can restore them.
    """
    clash = set(a) & set(b)
    if clash:
        raise CompositionError(f"id collision while merging: {sorted(clash)[:5]}")
    key = key or f"{a.name}+{b.name}"
    nodes: dict[str, Variable] = {**a.variables, **b.variables}
    for sock, provider in bindings:
        if sock not in nodes or provider not in nodes:
            raise CompositionError(f"binding {sock!r} <- {provider!r} names a missing variable")
        if (sock in a) == (provider in a):
            raise CompositionError(f"binding {sock!r} <- {provider!r} does not cross the models")
        var = nodes[sock]
        if not isinstance(var, SocketVariable):
            raise CompositionError(f"{sock!r} is not a socket")
        if var.bound_parent is not None:
            raise CompositionError(f"socket {sock!r} is already bound")
        nodes[sock] = replace(var, bound_parent=provider)
    record = MergeRecord(
        key=key,
        left_name=a.name,
        right_name=b.name,
        left_ids=frozenset(a),
        right_ids=frozenset(b),
        bindings=tuple((s, p) for s, p in bindings),
        left_provenance=a.provenance,
        right_provenance=b.provenance,
    )
    return Scm(nodes.values(), name=name or key, provenance=(record,))


def split(merged: Scm, key: str) -> tuple[Scm, Scm]:
    """Undo the outermost merge recorded under ``key``."""
    record = next((r for r in merged.provenance if r.key == key), None)
    if record is None:
        known = [r.key for r in merged.provenance]
        raise CompositionError(f"unknown provenance key {key!r} (outermost merges: {known})")
    extra = set(merged) - record.left_ids - record.right_ids
    if extra:
        raise CompositionError(f"variables added after the merge cannot be split: {sorted(extra)[:5]}")
    bound = {s for s, _ in record.bindings}

    def side(ids, name, prov):
        out = []
        for vid in merged:
            if vid not in ids:
                continue
            var = merged[vid]
            if vid in bound:
                var = replace(var, bound_parent=None)
            out.append(var)
        return Scm(out, name=name, provenance=prov)

    return (
        side(record.left_ids, record.left_name, record.left_provenance),
        side(record.right_ids, record.right_name, record.right_provenance),
    )


# -- mutable input sets ------------------------------------------------------------


@dataclass(frozen=True)
class ChainLink:
    source_id: int
    source: str
    tag: str
    gate_alpha: str
    gate_omega: str
    union: str
    tail: str
    theta_alpha: float
    theta_omega: float


@dataclass(frozen=True)
class InputSetChain:
    """A linked list of union variables feeding a sink's input socket.

    ``terminator`` is the currently free tail socket (the ``U^S_∅`` where the
    next union attaches); ``empty`` is the fixed ``U_∅`` used by closed gates.
    """

    scm: Scm
    name: str
    sink_input: str
    terminator: str
    empty: str
    step_size: float
    links: tuple = ()

    def link(self, source_id: int) -> ChainLink:
        for ln in self.links:
            if ln.source_id == source_id:
                return ln
        raise CompositionError(f"chain {self.name!r} has no source {source_id}")

    @property
    def source_ids(self) -> list[int]:
        return [ln.source_id for ln in self.links]

    def active_at(self, t: float) -> list[int]:
        half = 0.5 * self.step_size
        return [ln.source_id for ln in self.links
                if ln.theta_alpha - half < t < ln.theta_omega + half]


def create_chain(scm: Scm, name: str, sink_input: str, step_size: float) -> InputSetChain:
    var = scm[sink_input]
    if not isinstance(var, SocketVariable) or var.bound_parent is not None:
        raise CompositionError(f"{sink_input!r} must be an unbound socket")
    empty = f"{name}.u_empty"
    scm = add_variables(scm, [exogenous(empty, EMPTY_DIST, label="U_∅")])
    return InputSetChain(scm, name, sink_input, sink_input, empty, float(step_size))


def _on_grid(t: float, dt: float) -> bool:
    k = round(t / dt)
    return abs(k * dt - t) <= 1e-9 * max(1.0, abs(t))


def _omega_gate(chain: InputSetChain, vid: str, tag: str, theta_omega: float):
    # source passes while C_T <= theta_omega on the grid
    return time_conditional(vid, tag, chain.empty, theta_omega + 0.5 * chain.step_size,
                            label="V^ω_T?")


def introduce_source(chain: InputSetChain, source: str, source_id: int, t: float,
                     theta_omega: float | None = None) -> InputSetChain:
    """Attach ``source`` with gates ``theta_alpha = theta_omega = t``."""
    if not _on_grid(t, chain.step_size):
        raise CompositionError(f"introduction time {t} is off the grid")
    if source_id in chain.source_ids:
        raise CompositionError(f"source id {source_id} already used in chain {chain.name!r}")
    if source not in chain.scm:
        raise CompositionError(f"source {source!r} does not exist")
    theta_omega = t if theta_omega is None else theta_omega
    if theta_omega < t:
        raise CompositionError("theta_omega precedes theta_alpha")
    p = f"{chain.name}.{source_id}"
    link = ChainLink(source_id, source, f"{p}.tag", f"{p}.alpha", f"{p}.omega",
                     f"{p}.union", f"{p}.tail", float(t), float(theta_omega))
    new_vars = [
        plain(link.tag, [source], _Tag(source_id)),
        _omega_gate(chain, link.gate_omega, link.tag, theta_omega),
        time_conditional(link.gate_alpha, chain.empty, link.gate_omega, t, label="V^α_T?"),
        socket(link.tail, EMPTY_DIST, label="U^S_∅"),
        union(link.union, link.gate_alpha, link.tail),
    ]
    scm = add_variables(chain.scm, new_vars)
    scm = connect_socket(scm, chain.terminator, link.union)
    return replace(chain, scm=scm, terminator=link.tail, links=chain.links + (link,))


def refresh_source(chain: InputSetChain, source_id: int, t: float) -> InputSetChain:
    """Extend a present source's window to ``t`` (``theta_omega = t``)."""
    link = chain.link(source_id)
    if t < link.theta_omega - 1e-9:
        raise CompositionError(
            f"refresh at {t} precedes current theta_omega {link.theta_omega} of source {source_id}"
        )
    return _set_window(chain, source_id, link.theta_alpha, t)


def _set_window(chain: InputSetChain, source_id: int, theta_alpha: float,
                theta_omega: float) -> InputSetChain:
    link = chain.link(source_id)
    new_link = replace(link, theta_alpha=float(theta_alpha), theta_omega=float(theta_omega))
    scm = chain.scm.replace_variables(
        _omega_gate(chain, link.gate_omega, link.tag, theta_omega),
        time_conditional(link.gate_alpha, chain.empty, link.gate_omega, theta_alpha,
                         label="V^α_T?"),
    )
    links = tuple(new_link if ln.source_id == source_id else ln for ln in chain.links)
    return replace(chain, scm=scm, links=links)


def backdate_source(chain: InputSetChain, source_id: int, theta_alpha: float) -> InputSetChain:
    """Move a source's opening gate earlier. Breaks retrospective stationarity;
    only useful as a negative control for :func:`check_rcs`."""
    link = chain.link(source_id)
    return _set_window(chain, source_id, theta_alpha, link.theta_omega)


@dataclass(frozen=True)
class _Tag:
    source_id: int

    def __call__(self, value):
        return singleton(self.source_id, value)


# -- timelines and retrospective causal stationarity ----------------------------------


@dataclass
class ModelTimeline:
    """Snapshots ``M_0, M_dt, ..., M_t`` of a model whose input set changes online."""

    chain: InputSetChain
    sinks: tuple
    rng_seed: int = 0
    snapshots: list = field(default_factory=list)
    times: list = field(default_factory=list)
    recorded: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @property
    def step_size(self) -> float:
        return self.chain.step_size

    @property
    def next_time(self) -> float:
        return len(self.snapshots) * self.step_size

    def advance(self, introduce: Iterable[tuple[Any, int]] = (),
                refresh: Iterable[int] = ()) -> Scm:
        """Apply this step's mutations, append the snapshot and record sink values.

        ``introduce`` holds ``(source, source_id)`` pairs where ``source`` is a
        variable id already in the model or a new variable to add first.
        """
        step = len(self.snapshots)
        t = step * self.step_size
        chain = self.chain
        for sid in refresh:
            chain = refresh_source(chain, sid, t)
            self.log.append({"step": step, "op": "refresh", "source_id": sid, "t": t})
        for source, sid in introduce:
            if not isinstance(source, str):
                chain = replace(chain, scm=add_variables(chain.scm, [source]))
                source = source.id
            chain = introduce_source(chain, source, sid, t)
            self.log.append({"step": step, "op": "introduce", "source_id": sid, "t": t})
        self.chain = chain
        self.snapshots.append(chain.scm)
        self.times.append(t)
        ctx = EvaluationContext(self.step_size, self.rng_seed, time=t)
        self.recorded.append({s: evaluate(chain.scm, s, ctx) for s in self.sinks})
        return chain.scm

    def log_jsonl(self) -> str:
        return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in self.log)


@dataclass
class RcsReport:
    mismatches: list = field(default_factory=list)
    comparisons: int = 0

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_json(self) -> str:
        return json.dumps({
            "ok": self.ok,
            "comparisons": self.comparisons,
            "mismatches": [
                {"snapshot_t": s, "eval_t": e, "sink": k,
                 "expected": to_jsonable(x), "got": to_jsonable(g)}
                for s, e, k, x, g in self.mismatches
            ],
        }, sort_keys=True)


def check_rcs(timeline: ModelTimeline, snapshots: Sequence[Scm] | None = None) -> RcsReport:
    """Check every snapshot against the values recorded at every earlier step.

    ``snapshots`` overrides the timeline's own models (e.g. to audit a tampered
    model against the recorded history).
    """
    if not timeline.snapshots:
        raise CompositionError("timeline is empty")
    models = list(timeline.snapshots if snapshots is None else snapshots)
    report = RcsReport()
    for m, snap_t in zip(models, timeline.times):
        ctx = EvaluationContext(timeline.step_size, timeline.rng_seed)
        for t_eval, recorded in zip(timeline.times, timeline.recorded):
            if t_eval > snap_t + 1e-12:
                break
            ctx.set_time(t_eval)
            for sink, expected in recorded.items():
                got = evaluate(m, sink, ctx)
                report.comparisons += 1
                if not values_close(got, expected):
                    report.mismatches.append((snap_t, t_eval, sink, expected, got))
    return report
