"""Deterministic soft-contact rigid-body stepper.

Penalty (spring-damper) contacts with regularized Coulomb friction and
quasi-static velocity drag; one deepest contact point per convex pair.
The stepper itself treats every body as free; the manipulator module slaves
the gripped object kinematically through the coupled world dynamics.

Determinism: identical inputs produce bit-identical outputs (fixed pair
order, no RNG, single-threaded kernels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .scene import BodyPose, Box, Cylinder, RigidObject, SceneConfig, UnknownBodyError
import dataclasses


class PhysicsFault(RuntimeError):
    """Non-finite state after a step: the stiffness/dt combination exploded."""


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2000.0       # N/m
    damping: float = 20.0           # N*s/m on the normal rate
    friction_mu: float = 0.4
    smoothing_eps: float = 0.002    # m, C1 penetration ramp width
    linear_drag: float = 4.0        # 1/s
    yaw_drag: float = 4.0           # 1/s
    tangent_vel_eps: float = 0.01   # m/s, friction regularization
    speed_cap: float = 5.0          # m/s, numerical safety clamp

    def __post_init__(self):
        if self.stiffness <= 0 or self.damping < 0 or self.smoothing_eps <= 0:
            raise ValueError("invalid contact parameters")

    def as_array(self) -> np.ndarray:
        return np.array([self.stiffness, self.damping, self.friction_mu,
                         self.smoothing_eps, self.linear_drag, self.yaw_drag,
                         self.tangent_vel_eps, self.speed_cap])


@dataclass(frozen=True)
class StepParams:
    dt: float = 0.006
    gravity: float = 9.81

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class ContactPoint:
    body_a: str
    body_b: str
    normal: tuple[float, float, float]
    depth: float
    point: tuple[float, float, float]
    force: tuple[float, float, float] = (0.0, 0.0, 0.0)


_STATIC_NAMES = {K.FLOOR: "floor", K.WALL_X0: "wall_x0", K.WALL_X1: "wall_x1",
                 K.WALL_Y0: "wall_y0", K.WALL_Y1: "wall_y1"}


def validate_stability(scene: SceneConfig, step: StepParams,
                       contact: ContactParams) -> None:
    """Enforce the documented stability region of the explicit integrator:
    stiffness*dt^2/mass < 1 and damping*dt/mass < 1 for every body."""
    for o in scene.all_bodies():
        if contact.stiffness * step.dt ** 2 / o.mass >= 1.0:
            raise ValueError(
                f"unstable: stiffness*dt^2/mass = "
                f"{contact.stiffness * step.dt ** 2 / o.mass:.3f} >= 1 for {o.id!r}")
        if contact.damping * step.dt / o.mass >= 1.0:
            raise ValueError(
                f"unstable: damping*dt/mass >= 1 for {o.id!r}")


class BodyArrays:
    """Flat array mirror of a scene, reused across kernel calls."""

    def __init__(self, scene: SceneConfig):
        bodies = scene.all_bodies()
        B = len(bodies)
        self.ids = [o.id for o in bodies]
        self.pose = np.empty((B, 4))
        self.vel = np.empty((B, 4))
        self.gtypes = np.empty(B, dtype=np.int64)
        self.dims = np.zeros((B, 3))
        self.mass = np.empty(B)
        self.rc = np.empty(B)
        self.hh = np.empty(B)
        self.iyaw = np.empty(B)
        for i, o in enumerate(bodies):
            self.pose[i] = (o.pose.x, o.pose.y, o.pose.z, o.pose.yaw)
            self.vel[i] = o.velocity
            self.mass[i] = o.mass
            g = o.geom
            if isinstance(g, Cylinder):
                self.gtypes[i] = K.GT_CYL
                self.dims[i, :2] = (g.radius, g.height)
                self.iyaw[i] = 0.5 * o.mass * g.radius ** 2
            else:
                self.gtypes[i] = K.GT_BOX
                self.dims[i] = (g.half_x, g.half_y, g.half_z)
                self.iyaw[i] = o.mass * (g.half_x ** 2 + g.half_y ** 2) / 3.0
            self.rc[i] = g.circumradius
            self.hh[i] = g.half_height
        self.force = np.zeros((B, 4))
        self.con = np.empty((K.MAX_CONTACTS, K.CON_COLS))

    def snapshot(self, template: SceneConfig) -> SceneConfig:
        bodies = template.all_bodies()
        out = []
        for i, o in enumerate(bodies):
            pose = BodyPose(self.pose[i, 0], self.pose[i, 1], self.pose[i, 2],
                            _wrap_angle(self.pose[i, 3]), tilt=o.pose.tilt)
            out.append(dataclasses.replace(o, pose=pose,
                                           velocity=tuple(self.vel[i])))
        return dataclasses.replace(template, objects=tuple(out[:-1]),
                                   new_object=out[-1])


def _wrap_angle(a: float) -> float:
    if -math.pi < a <= math.pi:
        return a
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def detect_contacts(scene: SceneConfig) -> list[ContactPoint]:
    """One deepest-point contact per overlapping pair, including container
    walls and floor; geometric only (forces are filled by the step)."""
    arr = BodyArrays(scene)
    n = K.gather_contacts(arr.pose, arr.gtypes, arr.dims, arr.rc, arr.hh,
                          len(arr.ids), scene.container.width,
                          scene.container.length, arr.con, -1)
    return _contact_list(arr, n)


def _contact_list(arr: BodyArrays, n: int) -> list[ContactPoint]:
    out = []
    for r in range(n):
        ia = int(arr.con[r, 0])
        ib = int(arr.con[r, 1])
        out.append(ContactPoint(
            body_a=arr.ids[ia] if ia >= 0 else _STATIC_NAMES[ia],
            body_b=arr.ids[ib] if ib >= 0 else _STATIC_NAMES[ib],
            normal=tuple(arr.con[r, 2:5]),
            depth=arr.con[r, 5],
            point=tuple(arr.con[r, 6:9]),
            force=tuple(arr.con[r, 9:12]),
        ))
    return out


def contact_force(c: ContactPoint, params: ContactParams,
                  rel_velocity=(0.0, 0.0, 0.0)) -> tuple[float, float, float]:
    """Force on body_b for a contact given the relative velocity of b w.r.t.
    a at the contact point."""
    return K.contact_force_single(c.normal[0], c.normal[1], c.normal[2],
                                  c.depth, rel_velocity[0], rel_velocity[1],
                                  rel_velocity[2], params.as_array())


def step(scene: SceneConfig, params: StepParams | None = None,
         contact: ContactParams | None = None) -> SceneConfig:
    """Advance every body one semi-implicit Euler step (gravity, contacts,
    drag).  Value semantics: the input scene is untouched."""
    params = params or StepParams()
    contact = contact or ContactParams()
    arr = BodyArrays(scene)
    ncon = K.step_bodies(arr.pose, arr.vel, arr.gtypes, arr.dims, arr.rc,
                         arr.hh, arr.mass, arr.iyaw, len(arr.ids),
                         scene.container.width, scene.container.length,
                         contact.as_array(), params.dt, params.gravity,
                         arr.con, arr.force)
    if ncon < 0:
        raise PhysicsFault(
            "non-finite state after step; check stiffness/dt stability "
            f"(stiffness={contact.stiffness}, dt={params.dt})")
    out = arr.snapshot(scene)
    object.__setattr__(out, "_last_forces",
                       {bid: tuple(arr.force[i, :3]) for i, bid in enumerate(arr.ids)})
    object.__setattr__(out, "_last_contacts", _contact_list(arr, ncon))
    return out


def settle(scene: SceneConfig, steps: int = 30,
           params: StepParams | None = None,
           contact: ContactParams | None = None) -> SceneConfig:
    """Exactly `steps` zero-control physics steps (placement settling)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    params = params or StepParams()
    contact = contact or ContactParams()
    arr = BodyArrays(scene)
    ok = K.settle_bodies(arr.pose, arr.vel, arr.gtypes, arr.dims, arr.rc,
                         arr.hh, arr.mass, arr.iyaw, steps,
                         scene.container.width, scene.container.length,
                         contact.as_array(), params.dt, params.gravity,
                         arr.con, arr.force)
    if ok < 0:
        raise PhysicsFault("non-finite state during settle")
    return arr.snapshot(scene)


def penetration_metric(scene: SceneConfig,
                       contact: ContactParams | None = None) -> float:
    """Sum of pairwise contact depths exceeding the smoothing width: the
    lasting-penetration penalty of the placement cost."""
    contact = contact or ContactParams()
    total = 0.0
    for c in detect_contacts(scene):
        excess = c.depth - contact.smoothing_eps
        if excess > 0.0:
            total += excess
    return total


def net_contact_force(scene: SceneConfig, body_id: str) -> tuple[float, float, float]:
    """Net contact force on a body accumulated during the most recent step;
    zero for a scene that has not been stepped."""
    scene.body(body_id)
    forces = getattr(scene, "_last_forces", None)
    if forces is None:
        return (0.0, 0.0, 0.0)
    return forces[body_id]


def last_contacts(scene: SceneConfig) -> list[ContactPoint]:
    """Contacts (with resolved forces) from the most recent step."""
    return getattr(scene, "_last_contacts", [])


def support_height(geom) -> float:
    """Resting height of the body center when sitting on the floor plane."""
    return geom.half_height


def equilibrium_penetration(mass: float, gravity: float,
                            contact: ContactParams) -> float:
    """Static floor penetration where the penalty spring carries the weight
    (inverse of the C1 ramp); the settling oracle in the tests."""
    target = mass * gravity / contact.stiffness
    eps = contact.smoothing_eps
    if target >= eps:
        return target
    lo, hi = 0.0, eps
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if K.smooth_ramp(mid, eps) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
