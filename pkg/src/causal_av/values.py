"""Value types shared by every model layer.

Runtime values stay plain (floats, :class:`Vec2`, frozensets, ...). Physical
units are carried by the *variables* that produce them and are checked when
edges are built, so the hot evaluation path never touches unit objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple


@dataclass(frozen=True)
class Unit:
    """SI unit as exponents of metre, kilogram and second.

    Radians are dimensionless; ``label`` only affects display.
    """

    m: int = 0
    kg: int = 0
    s: int = 0
    label: str | None = None

    def _dims(self):
        return (self.m, self.kg, self.s)

    def __eq__(self, other):
        if not isinstance(other, Unit):
            return NotImplemented
        return self._dims() == other._dims()

    def __hash__(self):
        return hash(self._dims())

    def __mul__(self, other: "Unit") -> "Unit":
        return Unit(self.m + other.m, self.kg + other.kg, self.s + other.s)

    def __truediv__(self, other: "Unit") -> "Unit":
        return Unit(self.m - other.m, self.kg - other.kg, self.s - other.s)

    def __str__(self):
        if self.label:
            return self.label
        for name, unit in NAMED_UNITS.items():
            if unit == self:
                return name
        parts = []
        for sym, exp in (("m", self.m), ("kg", self.kg), ("s", self.s)):
            if exp == 1:
                parts.append(sym)
            elif exp:
                parts.append(f"{sym}^{exp}")
        return "·".join(parts) or "1"


DIMENSIONLESS = Unit()
M = Unit(m=1)
KG = Unit(kg=1)
S = Unit(s=1)
RAD = Unit(label="rad")
M_S = M / S
M_S2 = M / (S * S)
N = KG * M_S2
NM = N * M
KG_M2 = KG * M * M
RAD_S = Unit(s=-1, label="rad/s")
RAD_S2 = Unit(s=-2, label="rad/s²")
N_RAD = Unit(m=1, kg=1, s=-2, label="N/rad")

NAMED_UNITS = {
    "1": DIMENSIONLESS,
    "m": M,
    "kg": KG,
    "s": S,
    "m/s": M_S,
    "m/s²": M_S2,
    "N": N,
    "N·m": NM,
    "kg·m²": KG_M2,
    "1/s": Unit(s=-1),
    "1/s²": Unit(s=-2),
}


class Vec2(NamedTuple):
    x: float
    y: float

    def __add__(self, other):  # type: ignore[override]
        return Vec2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Vec2(self.x - other[0], self.y - other[1])

    def __neg__(self):
        return Vec2(-self.x, -self.y)

    def __mul__(self, k):  # type: ignore[override]
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return Vec2(self.x / k, self.y / k)

    def dot(self, other) -> float:
        return self.x * other[0] + self.y * other[1]

    def cross(self, other) -> float:
        return self.x * other[1] - self.y * other[0]

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def rotated(self, angle: float) -> "Vec2":
        c, s = math.cos(angle), math.sin(angle)
        return Vec2(c * self.x - s * self.y, s * self.x + c * self.y)

    @staticmethod
    def polar(r: float, angle: float) -> "Vec2":
        return Vec2(r * math.cos(angle), r * math.sin(angle))


ZERO2 = Vec2(0.0, 0.0)


class _Empty:
    """The empty value ∅. A singleton distinct from an empty source set."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "∅"

    def __reduce__(self):
        return (_Empty, ())


EMPTY = _Empty()


class _Infinity(float):
    """+∞ headway sentinel; compares like ``math.inf`` but is identifiable."""

    def __new__(cls):
        return super().__new__(cls, math.inf)

    def __repr__(self):
        return "INF"


INF = _Infinity()


def is_inf(value: Any) -> bool:
    return isinstance(value, float) and math.isinf(value) and value > 0


@dataclass(frozen=True)
class Action:
    """Planner goal: a speed and a lane, each with an absolute deadline."""

    goal_speed: float
    speed_goal_time: float
    goal_lane: int
    lane_goal_time: float
    label: str = ""

    @property
    def end_time(self) -> float:
        return max(self.speed_goal_time, self.lane_goal_time)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "goal_speed": self.goal_speed,
            "speed_goal_time": self.speed_goal_time,
            "goal_lane": self.goal_lane,
            "lane_goal_time": self.lane_goal_time,
        }


def as_source_set(value: Any) -> frozenset:
    """Coerce ∅ or an iterable of ``(source_id, payload)`` pairs to a frozenset."""
    if value is EMPTY or value is None:
        return frozenset()
    if isinstance(value, frozenset):
        return value
    return frozenset(value)


def source_union(*sets: Any) -> frozenset:
    out: frozenset = frozenset()
    for s in sets:
        out = out | as_source_set(s)
    return out


def payloads(value: Any) -> list:
    """Payloads of a source set ordered by source id (deterministic)."""
    return [p for _, p in sorted(as_source_set(value), key=lambda item: item[0])]


def singleton(source_id: int, payload: Any) -> frozenset:
    return frozenset({(source_id, payload)})


def values_close(a: Any, b: Any, tol: float = 0.0) -> bool:
    """Structural comparison with an absolute tolerance on floats."""
    if isinstance(a, float) and isinstance(b, float):
        if math.isinf(a) or math.isinf(b) or math.isnan(a) or math.isnan(b):
            return a == b or (math.isnan(a) and math.isnan(b))
        return abs(a - b) <= tol
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(values_close(x, y, tol) for x, y in zip(a, b))
    return a == b


def max_abs_diff(a: Any, b: Any) -> float:
    """Largest absolute numeric difference between two values (0 if equal)."""
    if isinstance(a, (int, float)) and isinstance(b, (int, float)) and not isinstance(a, bool):
        if a == b:
            return 0.0
        return abs(float(a) - float(b))
    if isinstance(a, tuple) and isinstance(b, tuple) and len(a) == len(b):
        return max((max_abs_diff(x, y) for x, y in zip(a, b)), default=0.0)
    return 0.0 if a == b else math.inf


def to_jsonable(value: Any) -> Any:
    if value is EMPTY:
        return None
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Vec2):
        return [value.x, value.y]
    if isinstance(value, Action):
        return value.to_dict()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, frozenset):
        return [[sid, to_jsonable(p)] for sid, p in sorted(value, key=lambda i: i[0])]
    if isinstance(value, tuple):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Iterable) and not isinstance(value, (str, bytes)):
        return [to_jsonable(v) for v in value]
    return value
