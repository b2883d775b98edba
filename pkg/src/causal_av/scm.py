"""Structural causal model container and the effectful recursive evaluator.

An :class:`Scm` is an immutable mapping from variable id to variable. All
mutation helpers (``add_variables``, ``intervene``, socket binding, ...)
return a new model that shares unchanged variables with the old one.

Evaluation state (current time, buffer dictionaries, exogenous draws) lives in
an :class:`EvaluationContext`; one context per counterfactual branch.
"""
from __future__ import annotations

import enum
import sys
import threading
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import temporal as tv
from .temporal import (
    BufferSpec,
    PtsSpec,
    TctdSpec,
    TimeConditionalSpec,
    TimeScaleSpec,
    UnseededError,
)
from .values import EMPTY, S, Unit, source_union

VariableId = str


class ScmError(Exception):
    """Structural problem with a model (duplicate id, dangling edge, ...)."""


class UnitError(ScmError):
    pass


class BufferWriteError(RuntimeError):
    """A second write to an existing (buffer, time) key."""


class OffGridError(ValueError):
    pass


class CycleError(RuntimeError):
    pass


class VariableKind(enum.Enum):
    PLAIN = "plain"
    PTS = "pts"
    TSSP = "tssp"
    TSSQ = "tssq"
    TCTD = "tctd"
    TIME_CONDITIONAL = "time_conditional"
    BUFFER = "buffer"
    UNION = "union"
    SOCKET = "socket"


# -- distributions -----------------------------------------------------------


@dataclass(frozen=True)
class Degenerate:
    value: Any

    def sample(self, rng: np.random.Generator | None) -> Any:
        return self.value


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class Gaussian:
    mean: float
    stddev: float

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.normal(self.mean, self.stddev))


@dataclass(frozen=True)
class Empirical:
    """Draws uniformly from a fixed table of values."""

    table: tuple

    def __post_init__(self):
        if not self.table:
            raise ValueError("empirical distribution needs at least one value")

    def sample(self, rng: np.random.Generator) -> Any:
        return self.table[int(rng.integers(len(self.table)))]


@dataclass(frozen=True)
class Linear:
    """Equation ``bias + sum(c_i * x_i)``; compares by coefficients."""

    coefficients: tuple
    bias: float = 0.0

    def __call__(self, *args):
        out = self.bias
        for c, x in zip(self.coefficients, args):
            out = out + c * x
        return out


Distribution = Degenerate | Uniform | Gaussian | Empirical
EMPTY_DIST = Degenerate(EMPTY)


# -- variables ----------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """Equation returning a fixed value; compares by value."""

    value: Any

    def __call__(self, *args):
        return self.value


@dataclass(frozen=True)
class ExogenousVariable:
    id: VariableId
    distribution: Distribution
    hidden: bool = True
    unit: Unit | None = None
    label: str = ""

    @property
    def parents(self) -> tuple:
        return ()

    @property
    def display_name(self) -> str:
        return self.label or self.id


@dataclass(frozen=True)
class SocketVariable:
    """Exogenous input that may be bound to at most one provider variable.

    Unbound sockets draw from ``distribution``; the distribution is kept while
    bound so that disconnecting restores the original behaviour.
    """

    id: VariableId
    distribution: Distribution
    bound_parent: VariableId | None = None
    unit: Unit | None = None
    label: str = ""

    kind = VariableKind.SOCKET

    @property
    def parents(self) -> tuple:
        return () if self.bound_parent is None else (self.bound_parent,)

    @property
    def display_name(self) -> str:
        return self.label or self.id


Spec = PtsSpec | TimeScaleSpec | TctdSpec | TimeConditionalSpec | BufferSpec | None


@dataclass(frozen=True)
class EndogenousVariable:
    id: VariableId
    kind: VariableKind
    parents: tuple
    equation: Callable | None = field(default=None, compare=True)
    unit: Unit | None = None
    spec: Spec = None
    parent_units: tuple | None = None
    label: str = ""

    @property
    def display_name(self) -> str:
        return self.label or self.id


Variable = EndogenousVariable | ExogenousVariable | SocketVariable


# factories; the building blocks every template uses


def plain(vid, parents, equation, unit=None, parent_units=None, label=""):
    parents = tuple(parents)
    if parent_units is not None and len(parent_units) != len(parents):
        raise ScmError(f"{vid}: parent_units length does not match parents")
    return EndogenousVariable(
        vid, VariableKind.PLAIN, parents, equation, unit, None,
        tuple(parent_units) if parent_units is not None else None, label,
    )


def const(vid, value, unit=None, label=""):
    return EndogenousVariable(vid, VariableKind.PLAIN, (), Constant(value), unit, label=label)


def pts(vid, parent, label=""):
    spec = PtsSpec(parent)
    return EndogenousVariable(vid, VariableKind.PTS, spec.parents, spec=spec, label=label)


def tssp(vid, parent, label=""):
    spec = TimeScaleSpec(parent, "product")
    return EndogenousVariable(vid, VariableKind.TSSP, spec.parents, spec=spec, label=label)


def tssq(vid, parent, label=""):
    spec = TimeScaleSpec(parent, "quotient")
    return EndogenousVariable(vid, VariableKind.TSSQ, spec.parents, spec=spec, label=label)


def tctd(vid, parent, label=""):
    spec = TctdSpec(parent)
    return EndogenousVariable(vid, VariableKind.TCTD, spec.parents, unit=S, spec=spec, label=label)


def time_conditional(vid, before, after, threshold, label=""):
    spec = TimeConditionalSpec(before, after, float(threshold))
    return EndogenousVariable(
        vid, VariableKind.TIME_CONDITIONAL, spec.parents, spec=spec, label=label
    )


def buffer(vid, parent, label=""):
    spec = BufferSpec(parent)
    return EndogenousVariable(vid, VariableKind.BUFFER, spec.parents, spec=spec, label=label)


def union(vid, *parents, label=""):
    return EndogenousVariable(vid, VariableKind.UNION, tuple(parents), source_union, label=label)


def exogenous(vid, distribution, hidden=True, unit=None, label=""):
    return ExogenousVariable(vid, distribution, hidden, unit, label)


def socket(vid, distribution=EMPTY_DIST, unit=None, label=""):
    return SocketVariable(vid, distribution, None, unit, label)


# -- the model ----------------------------------------------------------------


@dataclass(frozen=True)
class MergeRecord:
    """Provenance of one merge: enough to split the result back apart."""

    key: str
    left_name: str
    right_name: str
    left_ids: frozenset
    right_ids: frozenset
    bindings: tuple  # ((socket_id, provider_id), ...)
    left_provenance: tuple
    right_provenance: tuple


class Scm:
    """Immutable SCM ``<U^H, U^S, V, F, P(U), P(U^S)>``.

    The equations ``F`` are stored on the endogenous variables themselves.
    ``initial_time`` is fixed to 0.
    """

    initial_time = 0.0

    def __init__(self, variables: Iterable[Variable] = (), name: str = "scm",
                 provenance: tuple = (), _units: dict | None = None):
        self._nodes: dict[str, Variable] = {}
        for var in variables:
            if var.id in self._nodes:
                raise ScmError(f"duplicate variable id {var.id!r}")
            self._nodes[var.id] = var
        self.name = name
        self.provenance = provenance
        self._children: dict | None = None
        if _units is None:
            self._check_edges()
            self._units = _resolve_units(self._nodes)
            _check_units(self._nodes, self._units)
        else:
            self._units = _units

    # mapping protocol
    def __getitem__(self, vid: str) -> Variable:
        try:
            return self._nodes[vid]
        except KeyError:
            raise KeyError(f"no variable {vid!r} in {self.name}") from None

    def __contains__(self, vid) -> bool:
        return vid in self._nodes

    def __iter__(self) -> Iterator[str]:
        return iter(self._nodes)

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scm):
            return NotImplemented
        return self._nodes == other._nodes and self.provenance == other.provenance

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return f"Scm({self.name!r}, {len(self)} variables)"

    @property
    def variables(self) -> Mapping[str, Variable]:
        return dict(self._nodes)

    @property
    def endogenous(self) -> dict[str, EndogenousVariable]:
        return {k: v for k, v in self._nodes.items() if isinstance(v, EndogenousVariable)}

    @property
    def hidden_exogenous(self) -> dict[str, ExogenousVariable]:
        return {k: v for k, v in self._nodes.items() if isinstance(v, ExogenousVariable)}

    @property
    def sockets(self) -> dict[str, SocketVariable]:
        return {k: v for k, v in self._nodes.items() if isinstance(v, SocketVariable)}

    def ids_of_kind(self, kind: VariableKind) -> list[str]:
        return [k for k, v in self._nodes.items() if getattr(v, "kind", None) is kind]

    def parents(self, vid: str) -> tuple:
        return self[vid].parents

    def children(self, vid: str) -> list[str]:
        if self._children is None:
            ch: dict[str, list] = {k: [] for k in self._nodes}
            for k, v in self._nodes.items():
                for p in v.parents:
                    ch[p].append(k)
            self._children = ch
        return self._children[vid]

    def descendants(self, vid: str) -> set[str]:
        seen: set[str] = set()
        stack = [vid]
        while stack:
            for c in self.children(stack.pop()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def unit_of(self, vid: str) -> Unit | None:
        return self._units.get(vid)

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return sum(len(v.parents) for v in self._nodes.values())

    def edges(self) -> list[tuple[str, str]]:
        return [(p, k) for k, v in self._nodes.items() for p in v.parents]

    def derive(self, variables: Iterable[Variable] | None = None, name: str | None = None,
               provenance: tuple | None = None) -> "Scm":
        return Scm(
            self._nodes.values() if variables is None else variables,
            name=self.name if name is None else name,
            provenance=self.provenance if provenance is None else provenance,
        )

    def replace_variables(self, *replacements: Variable) -> "Scm":
        nodes = dict(self._nodes)
        for var in replacements:
            if var.id not in nodes:
                raise ScmError(f"cannot replace unknown variable {var.id!r}")
            nodes[var.id] = var
        return Scm(nodes.values(), name=self.name, provenance=self.provenance)

    def _check_edges(self):
        for k, v in self._nodes.items():
            for p in v.parents:
                if p not in self._nodes:
                    raise ScmError(f"{k!r} references missing parent {p!r}")


def _resolve_units(nodes: dict) -> dict:
    units: dict[str, Unit | None] = {}
    visiting: set[str] = set()

    def unit(vid):
        if vid in units:
            return units[vid]
        if vid in visiting:
            return None
        visiting.add(vid)
        var = nodes[vid]
        if isinstance(var, (ExogenousVariable, SocketVariable)):
            u = var.unit
        elif var.unit is not None:
            u = var.unit
        else:
            kind = var.kind
            if kind in (VariableKind.PTS, VariableKind.BUFFER):
                u = unit(var.parents[0])
            elif kind is VariableKind.TSSP:
                pu = unit(var.parents[0])
                u = None if pu is None else pu * S
            elif kind is VariableKind.TSSQ:
                pu = unit(var.parents[0])
                u = None if pu is None else pu / S
            elif kind is VariableKind.TIME_CONDITIONAL:
                u = unit(var.parents[0])
                if u is None:
                    u = unit(var.parents[1])
            else:
                u = None
        visiting.discard(vid)
        units[vid] = u
        return u

    for vid in nodes:
        unit(vid)
    return units


def _check_units(nodes: dict, units: dict):
    for vid, var in nodes.items():
        if isinstance(var, SocketVariable):
            if var.bound_parent is not None:
                _expect(units, var.bound_parent, var.unit, vid)
            continue
        if not isinstance(var, EndogenousVariable):
            continue
        if var.parent_units is not None:
            for p, expected in zip(var.parents, var.parent_units):
                _expect(units, p, expected, vid)
        if var.kind is VariableKind.TCTD:
            _expect(units, var.parents[0], S, vid)
        elif var.kind is VariableKind.TIME_CONDITIONAL:
            u0, u1 = units.get(var.parents[0]), units.get(var.parents[1])
            if u0 is not None and u1 is not None and u0 != u1:
                raise UnitError(f"{vid}: time-conditional parents disagree ({u0} vs {u1})")


def _expect(units, parent, expected, child):
    got = units.get(parent)
    if expected is not None and got is not None and got != expected:
        raise UnitError(f"edge {parent!r} -> {child!r}: expected {expected}, got {got}")


# -- functional construction --------------------------------------------------


def add_variable(scm: Scm, var: Variable) -> Scm:
    return add_variables(scm, [var])


def add_variables(scm: Scm, variables: Sequence[Variable]) -> Scm:
    """Add a batch; parents may refer to variables added in the same batch."""
    nodes = list(scm._nodes.values())
    seen = set(scm._nodes)
    for var in variables:
        if var.id in seen:
            raise ScmError(f"duplicate variable id {var.id!r}")
        seen.add(var.id)
        nodes.append(var)
    return Scm(nodes, name=scm.name, provenance=scm.provenance)


def intervene(scm: Scm, target: VariableId, forced: Any) -> Scm:
    """do(target := forced): constant equation, parent edges severed."""
    var = scm[target]
    if not isinstance(var, EndogenousVariable):
        raise ScmError(f"cannot intervene on exogenous {target!r}; rebind sockets instead")
    new = EndogenousVariable(
        target, VariableKind.PLAIN, (), Constant(forced), scm.unit_of(target), label=var.label
    )
    return scm.replace_variables(new)


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    cycles_without_pts: list = field(default_factory=list)
    buffer_errors: list = field(default_factory=list)
    time_conditional_errors: list = field(default_factory=list)
    socket_errors: list = field(default_factory=list)
    exogenous_parent_errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.cycles_without_pts or self.buffer_errors
                    or self.time_conditional_errors or self.socket_errors
                    or self.exogenous_parent_errors)

    def __bool__(self):
        return self.ok


def validate(scm: Scm, max_cycles: int = 50) -> ValidationReport:
    import networkx as nx

    report = ValidationReport()
    g = nx.DiGraph()
    for vid, var in scm._nodes.items():
        kind = getattr(var, "kind", None)
        if kind is VariableKind.BUFFER and len(var.parents) != 1:
            report.buffer_errors.append(vid)
        if kind is VariableKind.TIME_CONDITIONAL and len(var.parents) != 2:
            report.time_conditional_errors.append(vid)
        if isinstance(var, SocketVariable) and len(var.parents) > 1:
            report.socket_errors.append(vid)
        if isinstance(var, EndogenousVariable):
            hidden = [p for p in var.parents if isinstance(scm[p], ExogenousVariable)]
            if len(hidden) > 1:
                report.exogenous_parent_errors.append(vid)
        if kind is VariableKind.PTS:
            continue
        g.add_node(vid)
        for p in var.parents:
            if getattr(scm[p], "kind", None) is not VariableKind.PTS:
                g.add_edge(p, vid)
    for cyc in nx.simple_cycles(g):
        report.cycles_without_pts.append(cyc)
        if len(report.cycles_without_pts) >= max_cycles:
            break
    return report


# -- evaluation context ---------------------------------------------------------


class EvaluationContext:
    """Time meta-variables plus the per-branch buffer and exogenous stores.

    Time is tracked as an integer step index; ``current_time = step * step_size``.
    """

    def __init__(self, step_size: float, rng_seed: int = 0, time: float = 0.0,
                 buffer_store: dict | None = None, exo_cache: dict | None = None):
        if not step_size > 0:
            raise ValueError("step size must be positive")
        self.step_size = float(step_size)
        self.rng_seed = int(rng_seed)
        self.buffer_store: dict = {} if buffer_store is None else buffer_store
        self.exo_cache: dict = {} if exo_cache is None else exo_cache
        self.step = 0
        self.step = self.step_of(time)

    @property
    def current_time(self) -> float:
        return self.step * self.step_size

    def step_of(self, time: float) -> int:
        k = round(time / self.step_size)
        if abs(k * self.step_size - time) > 1e-9 * max(1.0, abs(time)):
            raise OffGridError(f"time {time!r} is not a multiple of {self.step_size}")
        return int(k)

    def time_of(self, step: int) -> float:
        return step * self.step_size

    def set_time(self, time: float) -> None:
        k = self.step_of(time)
        if k < 0:
            raise OffGridError("time precedes the initial time")
        self.step = k

    def before(self, threshold: float) -> bool:
        """``C_T < threshold`` with grid-aware tolerance."""
        return self.step * self.step_size < threshold - 1e-6 * self.step_size

    def seed(self, vid: str, time: float, value: Any) -> None:
        self.commit(vid, self.step_of(time), value)

    def commit(self, vid: str, step: int, value: Any) -> None:
        key = (vid, step)
        if key in self.buffer_store:
            raise BufferWriteError(f"buffer {vid!r} already holds a value at step {step}")
        self.buffer_store[key] = value

    def lookup(self, vid: str, time: float, default: Any = None) -> Any:
        return self.buffer_store.get((vid, self.step_of(time)), default)

    def fork(self, before_time: float | None = None) -> "EvaluationContext":
        """Fresh context sharing entries strictly before ``before_time``."""
        if before_time is None:
            buf, exo = dict(self.buffer_store), dict(self.exo_cache)
        else:
            limit = before_time - 1e-6 * self.step_size
            buf = {k: v for k, v in self.buffer_store.items() if k[1] * self.step_size < limit}
            exo = {k: v for k, v in self.exo_cache.items() if k[1] * self.step_size < limit}
        ctx = EvaluationContext(self.step_size, self.rng_seed, buffer_store=buf, exo_cache=exo)
        ctx.step = self.step
        return ctx


def _seed_for(rng_seed: int, vid: str, step: int) -> list[int]:
    return [rng_seed % (1 << 63), zlib.crc32(vid.encode("utf-8")), step]


def sample_exogenous(ctx: EvaluationContext, var: ExogenousVariable | SocketVariable) -> Any:
    key = (var.id, ctx.step)
    cache = ctx.exo_cache
    if key in cache:
        return cache[key]
    dist = var.distribution
    if isinstance(dist, Degenerate):
        value = dist.value
    else:
        value = dist.sample(np.random.default_rng(_seed_for(ctx.rng_seed, var.id, ctx.step)))
    cache[key] = value
    return value


# -- evaluator ----------------------------------------------------------------


class _Evaluator:
    __slots__ = ("nodes", "ctx", "memo", "active")

    def __init__(self, scm: Scm, ctx: EvaluationContext):
        self.nodes = scm._nodes
        self.ctx = ctx
        self.memo: dict = {}
        self.active: set = set()

    def value(self, vid: str) -> Any:
        ctx = self.ctx
        key = (vid, ctx.step)
        memo = self.memo
        if key in memo:
            return memo[key]
        if key in self.active:
            raise CycleError(f"{vid!r} depends on itself at step {ctx.step} (cycle without PTS)")
        self.active.add(key)
        try:
            var = self.nodes[vid]
            if isinstance(var, EndogenousVariable):
                out = self._endogenous(var)
            elif isinstance(var, SocketVariable):
                if var.bound_parent is None:
                    out = sample_exogenous(ctx, var)
                else:
                    out = self.value(var.bound_parent)
            else:
                out = sample_exogenous(ctx, var)
        finally:
            self.active.discard(key)
        memo[key] = out
        return out

    def _endogenous(self, var: EndogenousVariable) -> Any:
        kind = var.kind
        ctx = self.ctx
        value = self.value
        if kind is VariableKind.PLAIN:
            return var.equation(*[value(p) for p in var.parents])
        if kind is VariableKind.BUFFER:
            res = tv.eval_buffer(var.spec, var.id, ctx, value)
            for bid, step, v in res.writes:
                ctx.commit(bid, step, tv.unbox(v))
            return res.value
        if kind is VariableKind.PTS:
            return tv.eval_pts(var.spec, ctx, value)
        if kind is VariableKind.TIME_CONDITIONAL:
            return tv.eval_time_conditional(var.spec, ctx, value)
        if kind is VariableKind.TSSP:
            return tv.eval_tssp(var.spec, ctx, value)
        if kind is VariableKind.TSSQ:
            return tv.eval_tssq(var.spec, ctx, value)
        if kind is VariableKind.TCTD:
            return tv.eval_tctd(var.spec, ctx, value)
        if kind is VariableKind.UNION:
            return source_union(*[value(p) for p in var.parents])
        raise ScmError(f"unknown variable kind {kind}")


_DEEP_STACK = 512 * 1024 * 1024


def _run_deep(fn: Callable[[], Any]) -> Any:
    """Run ``fn`` on a thread with a large stack and recursion limit."""
    result: dict = {}

    def target():
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 1_000_000))
        try:
            result["value"] = fn()
        except BaseException as exc:  # re-raised on the caller's thread
            result["error"] = exc
        finally:
            sys.setrecursionlimit(old)

    old_size = threading.stack_size()
    threading.stack_size(_DEEP_STACK)
    try:
        t = threading.Thread(target=target, name="scm-deep-eval")
        t.start()
    finally:
        threading.stack_size(old_size)
    t.join()
    if "error" in result:
        raise result["error"]
    return result["value"]


def evaluate_many(scm: Scm, targets: Sequence[VariableId], ctx: EvaluationContext) -> list:
    """Evaluate several targets at ``ctx.current_time`` in one traversal."""
    entry_step = ctx.step
    ev = _Evaluator(scm, ctx)

    def run():
        try:
            return [ev.value(t) for t in targets]
        finally:
            ctx.step = entry_step

    try:
        return run()
    except RecursionError:
        ev.memo.clear()
        ev.active.clear()
        return _run_deep(run)


def evaluate(scm: Scm, target: VariableId, ctx: EvaluationContext) -> Any:
    return evaluate_many(scm, [target], ctx)[0]


def evaluate_at(scm: Scm, target: VariableId, ctx: EvaluationContext, time: float) -> Any:
    """Evaluate ``target`` at ``time`` and restore the context's time."""
    old = ctx.step
    ctx.set_time(time)
    try:
        return evaluate(scm, target, ctx)
    finally:
        ctx.step = old


def run_steps(scm: Scm, targets: Sequence[VariableId], ctx: EvaluationContext,
              start: float, end: float) -> dict[float, list]:
    """Evaluate ``targets`` at every grid time in ``[start, end]`` in ascending order."""
    out = {}
    old = ctx.step
    try:
        for k in range(ctx.step_of(start), ctx.step_of(end) + 1):
            ctx.step = k
            out[ctx.current_time] = evaluate_many(scm, targets, ctx)
    finally:
        ctx.step = old
    return out


__all__ = [
    "BufferWriteError", "Constant", "CycleError", "Degenerate", "EMPTY_DIST", "Empirical",
    "EndogenousVariable", "EvaluationContext", "ExogenousVariable", "Gaussian", "Linear",
    "MergeRecord",
    "OffGridError", "Scm", "ScmError", "SocketVariable", "Uniform", "UnitError",
    "UnseededError", "ValidationReport", "VariableKind", "add_variable", "add_variables",
    "buffer", "const", "evaluate", "evaluate_at", "evaluate_many", "exogenous", "intervene",
    "plain", "pts", "run_steps", "sample_exogenous", "socket", "time_conditional", "tctd",
    "tssp", "tssq", "union", "validate",
]
