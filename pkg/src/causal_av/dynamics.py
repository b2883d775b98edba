"""Physical SCM templates: point mass, rigid body, entity and pairwise link.

All templates name their variables ``"{name}.{role}"`` so several instances
can live in one model. Every template is a self-contained, valid SCM whose
inputs are sockets; larger models are assembled with
:func:`causal_av.composition.merge`.

Integration is semi-implicit Euler as encoded by the PTS/TSSP chains::

    v_t = v_{t-1} + a_{t-1} * dt
    x_t = x_{t-1} + v_t * dt
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, NamedTuple

from .composition import merge
from .geometry import Obb, contact_point, distance_headway, sat_overlap
from .scm import (
    Degenerate,
    EMPTY_DIST,
    Scm,
    ScmError,
    buffer,
    const,
    plain,
    pts,
    socket,
    tssp,
    tssq,
)
from .values import (
    DIMENSIONLESS,
    INF,
    KG,
    KG_M2,
    M,
    M_S,
    M_S2,
    N,
    NM,
    RAD,
    RAD_S,
    RAD_S2,
    S,
    ZERO2,
    Vec2,
    payloads,
)

N_S = N * S  # impulse
NM_S = NM * S  # angular impulse


# -- value types -------------------------------------------------------------------


class BodyState(NamedTuple):
    """Snapshot of a rectangular rigid body at one time step."""

    pos: Vec2
    vel: Vec2
    rot: float
    ang_vel: float
    length: float
    width: float
    mass: float
    inertia: float

    @property
    def heading(self) -> Vec2:
        return Vec2(math.cos(self.rot), math.sin(self.rot))

    @property
    def obb(self) -> Obb:
        return Obb(Vec2(*self.pos), Vec2(self.length / 2.0, self.width / 2.0), self.rot)

    @property
    def radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def point_velocity(self, r: Vec2) -> Vec2:
        return Vec2(self.vel[0] - self.ang_vel * r[1], self.vel[1] + self.ang_vel * r[0])


class Contact(NamedTuple):
    overlap: bool
    normal: Vec2  # from A towards B
    point: Vec2
    depth: float


NO_CONTACT = Contact(False, ZERO2, ZERO2, 0.0)


class Impulse(NamedTuple):
    on_a: Vec2  # linear impulse on A; B receives the negation
    angular_a: float
    angular_b: float
    closing_speed: float


NO_IMPULSE = Impulse(ZERO2, 0.0, 0.0, 0.0)


class LinkOutput(NamedTuple):
    force: Vec2
    torque: float
    headway: float


# -- specs ------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMassSpec:
    mass: float
    seed_pos: Vec2 = ZERO2
    seed_lin_vel: Vec2 = ZERO2
    seed_lin_acc: Vec2 | None = None

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    def seed_values(self, name: str) -> dict[str, Any]:
        out = {f"{name}.pos_buff": Vec2(*self.seed_pos),
               f"{name}.lin_vel_buff": Vec2(*self.seed_lin_vel)}
        if self.seed_lin_acc is not None:
            out[f"{name}.lin_acc_buff"] = Vec2(*self.seed_lin_acc)
        return out


@dataclass(frozen=True)
class RigidBodySpec:
    point_mass: PointMassSpec
    length: float
    width: float
    moment_of_inertia: float | None = None
    seed_rot: float = 0.0
    seed_ang_vel: float = 0.0
    seed_ang_acc: float | None = None

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("length and width must be positive")
        if self.moment_of_inertia is not None and not self.moment_of_inertia > 0:
            raise ValueError("moment of inertia must be positive")

    @property
    def inertia(self) -> float:
        if self.moment_of_inertia is not None:
            return self.moment_of_inertia
        # uniform rectangle
        return self.point_mass.mass * (self.length ** 2 + self.width ** 2) / 12.0

    def seed_values(self, name: str) -> dict[str, Any]:
        out = self.point_mass.seed_values(name)
        out[f"{name}.rot_buff"] = float(self.seed_rot)
        out[f"{name}.ang_vel_buff"] = float(self.seed_ang_vel)
        if self.seed_ang_acc is not None:
            out[f"{name}.ang_acc_buff"] = float(self.seed_ang_acc)
        return out


def seed_context(ctx, seeds: dict[str, Any], time: float) -> None:
    """Write template seeds into ``ctx`` at ``time``."""
    step = ctx.step_of(time)
    for vid, value in seeds.items():
        ctx.commit(vid, step, value)


# -- equations (module-level so rebuilt templates compare equal) -----------------------


def _add(a, b):
    return a + b


@dataclass(frozen=True)
class _Accel:
    def __call__(self, f_env, f_other, mass):
        return (f_env + f_other) / mass


def _ang_accel(t_env, t_other, inertia):
    return (t_env + t_other) / inertia


def _heading(rot):
    return Vec2(math.cos(rot), math.sin(rot))


@dataclass(frozen=True)
class _MakeState:
    length: float
    width: float
    mass: float
    inertia: float

    def __call__(self, pos, vel, rot, ang_vel):
        return BodyState(pos, vel, rot, ang_vel, self.length, self.width, self.mass, self.inertia)


@dataclass(frozen=True)
class QuadraticDrag:
    coefficient: float

    def __call__(self, vel):
        speed = math.hypot(vel[0], vel[1])
        return Vec2(-self.coefficient * speed * vel[0], -self.coefficient * speed * vel[1])


@dataclass(frozen=True)
class RotationalDrag:
    coefficient: float

    def __call__(self, ang_vel):
        return -self.coefficient * ang_vel


def _sum_forces(drag, links):
    total = drag
    for out in payloads(links):
        total = total + out.force
    return total


def _sum_torques(drag, links):
    total = drag
    for out in payloads(links):
        total = total + out.torque
    return total


def _min_headway(links):
    best = INF
    for out in payloads(links):
        if out.headway < best:
            best = out.headway
    return best


# -- builders ---------------------------------------------------------------------


def _point_mass_nodes(name: str, mass: float) -> list:
    n = lambda role: f"{name}.{role}"  # noqa: E731
    return [
        socket(n("env_force"), Degenerate(ZERO2), unit=N),
        socket(n("other_force"), Degenerate(ZERO2), unit=N),
        buffer(n("env_force_buff"), n("env_force")),
        buffer(n("other_force_buff"), n("other_force")),
        const(n("mass"), float(mass), unit=KG),
        plain(n("lin_acc"), [n("env_force_buff"), n("other_force_buff"), n("mass")], _Accel(),
              unit=M_S2, parent_units=(N, N, KG)),
        buffer(n("lin_acc_buff"), n("lin_acc")),
        pts(n("prev_lin_acc"), n("lin_acc_buff")),
        tssp(n("lin_vel_delta"), n("prev_lin_acc")),
        pts(n("prev_lin_vel"), n("lin_vel_buff")),
        plain(n("lin_vel"), [n("prev_lin_vel"), n("lin_vel_delta")], _add, unit=M_S,
              parent_units=(M_S, M_S)),
        buffer(n("lin_vel_buff"), n("lin_vel")),
        tssp(n("pos_delta"), n("lin_vel_buff")),
        pts(n("prev_pos"), n("pos_buff")),
        plain(n("pos"), [n("prev_pos"), n("pos_delta")], _add, unit=M, parent_units=(M, M)),
        buffer(n("pos_buff"), n("pos")),
    ]


def build_point_mass_scm(spec: PointMassSpec, name: str = "pm") -> Scm:
    """2-D point mass driven by ``env_force`` and ``other_force`` sockets.

    Seed ``pos_buff`` and ``lin_vel_buff`` at the entry time (see
    :meth:`PointMassSpec.seed_values`).
    """
    return Scm(_point_mass_nodes(name, spec.mass), name=name)


def build_rigid_body_scm(spec: RigidBodySpec, name: str = "body") -> Scm:
    """Point mass plus rotation, a rectangular footprint and a headway input."""
    n = lambda role: f"{name}.{role}"  # noqa: E731
    nodes = _point_mass_nodes(name, spec.point_mass.mass)
    nodes += [
        socket(n("env_torque"), Degenerate(0.0), unit=NM),
        socket(n("other_torque"), Degenerate(0.0), unit=NM),
        socket(n("dist_headway"), Degenerate(INF), unit=M),
        buffer(n("env_torque_buff"), n("env_torque")),
        buffer(n("other_torque_buff"), n("other_torque")),
        buffer(n("dist_headway_buff"), n("dist_headway")),
        const(n("inertia"), float(spec.inertia), unit=KG_M2),
        plain(n("ang_acc"), [n("env_torque_buff"), n("other_torque_buff"), n("inertia")],
              _ang_accel, unit=RAD_S2, parent_units=(NM, NM, KG_M2)),
        buffer(n("ang_acc_buff"), n("ang_acc")),
        pts(n("prev_ang_acc"), n("ang_acc_buff")),
        tssp(n("ang_vel_delta"), n("prev_ang_acc")),
        pts(n("prev_ang_vel"), n("ang_vel_buff")),
        plain(n("ang_vel"), [n("prev_ang_vel"), n("ang_vel_delta")], _add, unit=RAD_S,
              parent_units=(RAD_S, RAD_S)),
        buffer(n("ang_vel_buff"), n("ang_vel")),
        tssp(n("rot_delta"), n("ang_vel_buff")),
        pts(n("prev_rot"), n("rot_buff")),
        plain(n("rot"), [n("prev_rot"), n("rot_delta")], _add, unit=RAD,
              parent_units=(RAD, RAD)),
        buffer(n("rot_buff"), n("rot")),
        plain(n("dir"), [n("rot_buff")], _heading, unit=DIMENSIONLESS),
        plain(n("state"), [n("pos_buff"), n("lin_vel_buff"), n("rot_buff"), n("ang_vel_buff")],
              _MakeState(spec.length, spec.width, spec.point_mass.mass, spec.inertia)),
    ]
    return Scm(nodes, name=name)


def _require(scm: Scm, ids, what: str):
    missing = [i for i in ids if i not in scm]
    if missing:
        raise ScmError(f"{what} is missing {missing}")


def default_drag_coefficient(max_motor_torque: float = 1500.0, wheel_radius: float = 0.3,
                             terminal_speed: float = 60.0) -> float:
    """Quadratic drag giving ``terminal_speed`` at full motor force."""
    return (max_motor_torque / wheel_radius) / terminal_speed ** 2


def build_entity_scm(body: Scm, name: str, drag_coefficient: float,
                     rotational_drag: float = 500.0) -> Scm:
    """Wrap a rigid body so its environment inputs come from drag and links.

    Link outputs arrive as a source set on the ``{name}.link_in`` socket; use
    :func:`causal_av.composition.create_chain` on it to attach links. The
    entity part itself holds no buffers.
    """
    n = lambda role: f"{name}.{role}"  # noqa: E731
    _require(body, [n("env_force"), n("env_torque"), n("dist_headway"),
                    n("lin_vel_buff"), n("ang_vel_buff")], "entity body")
    part = Scm([
        socket(n("ent_vel"), Degenerate(ZERO2), unit=M_S),
        socket(n("ent_ang_vel"), Degenerate(0.0), unit=RAD_S),
        socket(n("link_in"), EMPTY_DIST, label="links"),
        plain(n("drag_force"), [n("ent_vel")], QuadraticDrag(float(drag_coefficient)), unit=N),
        plain(n("env_force_total"), [n("drag_force"), n("link_in")], _sum_forces, unit=N),
        plain(n("rot_drag"), [n("ent_ang_vel")], RotationalDrag(float(rotational_drag)), unit=NM),
        plain(n("env_torque_total"), [n("rot_drag"), n("link_in")], _sum_torques, unit=NM),
        plain(n("headway_min"), [n("link_in")], _min_headway, unit=M),
    ], name=f"{name}.entity")
    return merge(body, part, [
        (n("env_force"), n("env_force_total")),
        (n("env_torque"), n("env_torque_total")),
        (n("dist_headway"), n("headway_min")),
        (n("ent_vel"), n("lin_vel_buff")),
        (n("ent_ang_vel"), n("ang_vel_buff")),
    ], key=f"{name}.entity", name=body.name)


# -- collisions ----------------------------------------------------------------------


def compute_contact(a: BodyState, b: BodyState) -> Contact:
    dx, dy = b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]
    reach = a.radius + b.radius
    if dx * dx + dy * dy > reach * reach:
        return NO_CONTACT
    oa, ob = a.obb, b.obb
    hit = sat_overlap(oa, ob)
    if hit is None:
        return NO_CONTACT
    depth, normal = hit
    return Contact(True, normal, contact_point(oa, ob), depth)


def collision_impulse(a: BodyState, b: BodyState, contact: Contact,
                      restitution: float = 0.0) -> Impulse:
    """Rigid-body impulse along the contact normal; zero if separating."""
    if not contact.overlap:
        return NO_IMPULSE
    n = contact.normal
    ra = Vec2(contact.point[0] - a.pos[0], contact.point[1] - a.pos[1])
    rb = Vec2(contact.point[0] - b.pos[0], contact.point[1] - b.pos[1])
    v_rel = b.point_velocity(rb) - a.point_velocity(ra)
    vn = v_rel.dot(n)
    if vn >= 0.0:
        return Impulse(ZERO2, 0.0, 0.0, 0.0)
    ran, rbn = ra.cross(n), rb.cross(n)
    denom = 1.0 / a.mass + 1.0 / b.mass + ran * ran / a.inertia + rbn * rbn / b.inertia
    j = -(1.0 + restitution) * vn / denom
    on_b = n * j
    return Impulse(-on_b, ra.cross(-on_b), rb.cross(on_b), -vn)


@dataclass(frozen=True)
class _ImpulseEq:
    restitution: float

    def __call__(self, a, b, contact):
        return collision_impulse(a, b, contact, self.restitution)


def _impulse_linear(imp):
    return imp.on_a


def _impulse_ang_a(imp):
    return imp.angular_a


def _impulse_ang_b(imp):
    return imp.angular_b


def _dv_mag(imp, a):
    return math.hypot(imp.on_a[0], imp.on_a[1]) / a.mass


def _headway(follower: BodyState, leader: BodyState):
    return distance_headway(follower.obb, leader.obb)


def _out_a(force, torque, headway):
    return LinkOutput(force, torque, headway)


def _out_b(force, torque, headway):
    return LinkOutput(-force, torque, headway)


def build_link_scm(a: Scm, b: Scm, a_name: str, b_name: str, name: str | None = None,
                   restitution: float = 0.0) -> Scm:
    """Interaction between two entities.

    The link reads both bodies through the ``a_state``/``b_state`` sockets and
    emits one :class:`LinkOutput` per side (``out_a``, ``out_b``). The impulse
    is spread over one step by the ``coll_force`` quotient node, so each body's
    velocity changes by ``impulse / mass`` at the next step.
    """
    _require(a, [f"{a_name}.state"], "link side a")
    _require(b, [f"{b_name}.state"], "link side b")
    if not 0.0 <= restitution <= 1.0:
        raise ValueError("restitution must lie in [0, 1]")
    name = name or f"link.{a_name}.{b_name}"
    n = lambda role: f"{name}.{role}"  # noqa: E731
    return Scm([
        socket(n("a_state"), Degenerate(None)),
        socket(n("b_state"), Degenerate(None)),
        plain(n("contact"), [n("a_state"), n("b_state")], compute_contact),
        plain(n("impulse"), [n("a_state"), n("b_state"), n("contact")], _ImpulseEq(restitution)),
        plain(n("coll_impulse"), [n("impulse")], _impulse_linear, unit=N_S),
        tssq(n("coll_force"), n("coll_impulse")),
        plain(n("coll_ang_impulse_a"), [n("impulse")], _impulse_ang_a, unit=NM_S),
        plain(n("coll_ang_impulse_b"), [n("impulse")], _impulse_ang_b, unit=NM_S),
        tssq(n("coll_torque_a"), n("coll_ang_impulse_a")),
        tssq(n("coll_torque_b"), n("coll_ang_impulse_b")),
        plain(n("coll_lin_vel_mag"), [n("impulse"), n("a_state")], _dv_mag, unit=M_S),
        tssq(n("coll_lin_acc_mag"), n("coll_lin_vel_mag")),
        plain(n("headway_ab"), [n("a_state"), n("b_state")], _headway, unit=M),
        plain(n("headway_ba"), [n("b_state"), n("a_state")], _headway, unit=M),
        plain(n("out_a"), [n("coll_force"), n("coll_torque_a"), n("headway_ab")], _out_a),
        plain(n("out_b"), [n("coll_force"), n("coll_torque_b"), n("headway_ba")], _out_b),
    ], name=name)
