"""Temporal structural equations and the buffer effect.

Each ``eval_*`` function receives the variable's spec, the evaluation context
and a ``resolve`` callback that evaluates a parent id at the context's current
time. The engine in :mod:`causal_av.scm` dispatches to these.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable

if TYPE_CHECKING:  # pragma: no cover
    from .scm import EvaluationContext

Resolve = Callable[[str], Any]


class UnseededError(RuntimeError):
    """Temporal recursion reached below the initial time without a seed."""


@dataclass(frozen=True)
class PtsSpec:
    parent: str

    @property
    def parents(self):
        return (self.parent,)


@dataclass(frozen=True)
class TimeScaleSpec:
    parent: str
    mode: str  # "product" | "quotient"

    def __post_init__(self):
        if self.mode not in ("product", "quotient"):
            raise ValueError(f"unknown time-scale mode {self.mode!r}")

    @property
    def parents(self):
        return (self.parent,)


@dataclass(frozen=True)
class TctdSpec:
    parent: str

    @property
    def parents(self):
        return (self.parent,)


@dataclass(frozen=True)
class TimeConditionalSpec:
    parent0: str
    parent1: str
    threshold: float

    @property
    def parents(self):
        return (self.parent0, self.parent1)


@dataclass(frozen=True)
class BufferSpec:
    """A buffer caches its single parent. The dictionary itself lives in the
    evaluation context so that counterfactual branches never share writes."""

    parent: str

    @property
    def parents(self):
        return (self.parent,)


def eval_pts(spec: PtsSpec, ctx: "EvaluationContext", resolve: Resolve) -> Any:
    if ctx.step <= 0:
        raise UnseededError(
            f"previous-step lookup of {spec.parent!r} at t={ctx.current_time:g} "
            "reaches below the initial time; seed its buffer"
        )
    ctx.step -= 1
    try:
        return resolve(spec.parent)
    finally:
        ctx.step += 1


def eval_tssp(spec: TimeScaleSpec, ctx: "EvaluationContext", resolve: Resolve) -> Any:
    return resolve(spec.parent) * ctx.step_size


def eval_tssq(spec: TimeScaleSpec, ctx: "EvaluationContext", resolve: Resolve) -> Any:
    return resolve(spec.parent) / ctx.step_size


def eval_time_scale(spec: TimeScaleSpec, ctx: "EvaluationContext", resolve: Resolve) -> Any:
    if spec.mode == "product":
        return eval_tssp(spec, ctx, resolve)
    return eval_tssq(spec, ctx, resolve)


def eval_tctd(spec: TctdSpec, ctx: "EvaluationContext", resolve: Resolve) -> float:
    return resolve(spec.parent) - ctx.current_time


def eval_time_conditional(
    spec: TimeConditionalSpec, ctx: "EvaluationContext", resolve: Resolve
) -> Any:
    # only the selected parent is evaluated
    if ctx.before(spec.threshold):
        return resolve(spec.parent0)
    return resolve(spec.parent1)


# -- buffer effect ---------------------------------------------------------


@dataclass(frozen=True)
class Buffered:
    """``UP_x(value)``: a value paired with pending ``(buffer, step, value)`` writes."""

    value: Any
    writes: frozenset = frozenset()


def up(writes, value) -> Buffered:
    return Buffered(value, frozenset(writes))


def buffer_unit(value: Any) -> Buffered:
    return Buffered(value, frozenset())


def buffer_bind(m: Buffered, f: Callable[[Any], Buffered]) -> Buffered:
    nxt = f(m.value)
    return Buffered(nxt.value, m.writes | nxt.writes)


def eval_buffer(
    spec: BufferSpec, buffer_id: str, ctx: "EvaluationContext", resolve: Resolve
) -> Buffered:
    key = (buffer_id, ctx.step)
    store = ctx.buffer_store
    if key in store:
        return Buffered(store[key], frozenset())
    value = resolve(spec.parent)
    return Buffered(value, frozenset({(buffer_id, ctx.step, _hashable(value))}))


def _hashable(value):
    try:
        hash(value)
    except TypeError:
        return _Unhashable(value)
    return value


class _Unhashable:
    """Boxes a value that cannot live in a frozenset of writes."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    def __hash__(self):
        return id(self.value)

    def __eq__(self, other):
        return isinstance(other, _Unhashable) and other.value is self.value


def unbox(value):
    return value.value if isinstance(value, _Unhashable) else value
