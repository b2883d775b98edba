"""Planar geometry: oriented boxes, separating-axis overlap, headway, roads."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .values import INF, Vec2

_EPS = 1e-12


class Obb(NamedTuple):
    """Oriented box; ``half_extents.x`` runs along the heading ``rotation``."""

    center: Vec2
    half_extents: Vec2
    rotation: float

    @property
    def axes(self) -> tuple[Vec2, Vec2]:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return Vec2(c, s), Vec2(-s, c)

    def corners(self) -> list[Vec2]:
        u, n = self.axes
        hx, hy = self.half_extents
        c = Vec2(*self.center)
        # counter-clockwise
        return [c + u * hx + n * hy, c - u * hx + n * hy, c - u * hx - n * hy, c + u * hx - n * hy]

    def contains(self, p, tol: float = 0.0) -> bool:
        u, n = self.axes
        d = Vec2(p[0] - self.center[0], p[1] - self.center[1])
        return (abs(d.dot(u)) <= self.half_extents[0] + tol
                and abs(d.dot(n)) <= self.half_extents[1] + tol)


def make_obb(center, length: float, width: float, rotation: float) -> Obb:
    if length <= 0 or width <= 0:
        raise ValueError("box dimensions must be positive")
    return Obb(Vec2(*center), Vec2(length / 2.0, width / 2.0), float(rotation))


def _project(corners: Sequence[Vec2], axis: Vec2) -> tuple[float, float]:
    ps = [p.dot(axis) for p in corners]
    return min(ps), max(ps)


def sat_overlap(a: Obb, b: Obb) -> tuple[float, Vec2] | None:
    """Minimum penetration depth and unit normal (pointing from a to b).

    Returns None when a separating axis exists; touching boundaries count as
    overlap with depth 0.
    """
    ca, cb = a.corners(), b.corners()
    best_depth, best_axis = math.inf, None
    for axis in (*a.axes, *b.axes):
        amin, amax = _project(ca, axis)
        bmin, bmax = _project(cb, axis)
        depth = min(amax, bmax) - max(amin, bmin)
        if depth < -_EPS * max(1.0, abs(amax), abs(bmax)):
            return None
        if depth < best_depth:
            best_depth, best_axis = depth, axis
    d = Vec2(b.center[0] - a.center[0], b.center[1] - a.center[1])
    if d.dot(best_axis) < 0:
        best_axis = -best_axis
    return max(best_depth, 0.0), best_axis


def obb_overlap(a: Obb, b: Obb) -> bool:
    return sat_overlap(a, b) is not None


def _clip(poly: list[Vec2], inside, intersect) -> list[Vec2]:
    out: list[Vec2] = []
    if not poly:
        return out
    prev = poly[-1]
    for cur in poly:
        if inside(cur):
            if not inside(prev):
                out.append(intersect(prev, cur))
            out.append(cur)
        elif inside(prev):
            out.append(intersect(prev, cur))
        prev = cur
    return out


def clip_convex(subject: list[Vec2], clipper: list[Vec2]) -> list[Vec2]:
    """Sutherland-Hodgman clip of ``subject`` by a counter-clockwise convex ``clipper``."""
    poly = list(subject)
    m = len(clipper)
    for i in range(m):
        e0, e1 = clipper[i], clipper[(i + 1) % m]
        edge = e1 - e0

        def inside(p, e0=e0, edge=edge):
            return edge.cross(p - e0) >= -_EPS

        def intersect(p, q, e0=e0, edge=edge):
            dp, dq = edge.cross(p - e0), edge.cross(q - e0)
            t = dp / (dp - dq) if dp != dq else 0.0
            return p + (q - p) * t

        poly = _clip(poly, inside, intersect)
        if not poly:
            break
    return poly


def polygon_centroid(poly: Sequence[Vec2]) -> Vec2:
    area2 = 0.0
    cx = cy = 0.0
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        cr = p.cross(q)
        area2 += cr
        cx += (p.x + q.x) * cr
        cy += (p.y + q.y) * cr
    if abs(area2) < 1e-12:
        return Vec2(sum(p.x for p in poly) / n, sum(p.y for p in poly) / n)
    return Vec2(cx / (3.0 * area2), cy / (3.0 * area2))


def contact_point(a: Obb, b: Obb) -> Vec2:
    """Centroid of the overlap region (midpoint of centres if it degenerates)."""
    region = clip_convex(b.corners(), a.corners())
    if not region:
        return (Vec2(*a.center) + Vec2(*b.center)) * 0.5
    return polygon_centroid(region)


def distance_headway(follower: Obb, leader: Obb, margin: float = 0.5) -> float:
    """Gap from the follower's front face to the leader along the follower heading.

    Only the part of the leader inside the follower's corridor (follower width
    plus ``margin``) counts. Returns :data:`INF` when nothing of the leader is
    ahead inside the corridor, and 0 when the leader straddles the front face.
    """
    u, n = follower.axes
    c = Vec2(*follower.center)
    local = [Vec2((p - c).dot(u), (p - c).dot(n)) for p in leader.corners()]
    half = follower.half_extents[1] + 0.5 * margin
    strip = _clip(local, lambda p: p.y <= half,
                  lambda p, q: p + (q - p) * ((half - p.y) / (q.y - p.y)))
    strip = _clip(strip, lambda p: p.y >= -half,
                  lambda p, q: p + (q - p) * ((-half - p.y) / (q.y - p.y)))
    if not strip:
        return INF
    front = follower.half_extents[0]
    lo = min(p.x for p in strip)
    hi = max(p.x for p in strip)
    if hi < front:
        return INF
    if lo <= front:
        return 0.0
    return lo - front


# -- road ---------------------------------------------------------------------


@dataclass(frozen=True)
class Lane:
    lane_id: int
    center: float  # lateral offset of the centreline (m)
    width: float
    direction: int = 1  # +1 travels along +x, -1 along -x

    @property
    def heading(self) -> float:
        return 0.0 if self.direction > 0 else math.pi


@dataclass(frozen=True)
class RoadGeometry:
    """Straight road along the x axis made of parallel lanes."""

    lanes: tuple
    length: float = 1000.0

    def __post_init__(self):
        if not self.lanes:
            raise ValueError("road needs at least one lane")
        ids = [ln.lane_id for ln in self.lanes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate lane id")
        for ln in self.lanes:
            if not ln.width > 0:
                raise ValueError(f"lane {ln.lane_id} has non-positive width")
            if ln.direction not in (1, -1):
                raise ValueError(f"lane {ln.lane_id} direction must be +1 or -1")
        ordered = sorted(self.lanes, key=lambda ln: ln.center)
        for lo, hi in zip(ordered, ordered[1:]):
            if lo.center + lo.width / 2 > hi.center - hi.width / 2 + 1e-9:
                raise ValueError(f"lanes {lo.lane_id} and {hi.lane_id} overlap")

    def lane(self, lane_id: int) -> Lane:
        for ln in self.lanes:
            if ln.lane_id == lane_id:
                return ln
        raise KeyError(f"no lane {lane_id}")

    def has_lane(self, lane_id: int) -> bool:
        return any(ln.lane_id == lane_id for ln in self.lanes)

    def lane_at(self, y: float) -> int:
        """Lane whose centreline is nearest to lateral position ``y``."""
        return min(self.lanes, key=lambda ln: (abs(ln.center - y), ln.lane_id)).lane_id

    def project(self, lane_id: int, p) -> Vec2:
        return Vec2(float(p[0]), self.lane(lane_id).center)

    def neighbours(self, lane_id: int) -> list[int]:
        """Adjacent lanes travelling in the same direction."""
        ordered = sorted(self.lanes, key=lambda ln: ln.center)
        idx = next(i for i, ln in enumerate(ordered) if ln.lane_id == lane_id)
        here = ordered[idx]
        out = []
        for j in (idx - 1, idx + 1):
            if 0 <= j < len(ordered) and ordered[j].direction == here.direction:
                out.append(ordered[j].lane_id)
        return out

    @property
    def bounds(self) -> tuple[float, float]:
        lo = min(ln.center - ln.width / 2 for ln in self.lanes)
        hi = max(ln.center + ln.width / 2 for ln in self.lanes)
        return lo, hi
