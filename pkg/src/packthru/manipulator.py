"""Kinematic gantry manipulator carrying the gripped object.

A 4-DOF gantry (prismatic x, y, z plus a revolute yaw wrist) commanded by
joint velocities; forward kinematics are affine.  The gripped object hangs
below the pump tip through a compliant attachment: contact torque about the
tip drives a spring-damper tilt, and the object detaches for good when the
tilt magnitude exceeds the suction limit.  Contact forces never push the
gantry joints back (stiff position-controlled axes); they feed the tilt,
the end-effector force sensor, and the force-failure monitor only.

The state-vector reduction relative to a full arm: n = 8 + 8*N + 2
(4 joints + 4 joint rates, 8 per tracked resident, 2 tilt components).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .scene import BodyPose


@dataclass(frozen=True)
class ManipulatorModel:
    q_lower: tuple[float, float, float, float] = (0.0, 0.0, 0.02, -math.pi)
    q_upper: tuple[float, float, float, float] = (0.6, 0.5, 0.6, math.pi)
    max_speed: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 2.0)
    tip_offset: float = 0.05

    def __post_init__(self):
        if not all(lo < hi for lo, hi in zip(self.q_lower, self.q_upper)):
            raise ValueError("joint lower bounds must be below upper bounds")
        if min(self.max_speed) <= 0:
            raise ValueError("max joint speeds must be positive")

    def midpoints(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.q_lower) + np.asarray(self.q_upper))


@dataclass(frozen=True)
class JointState:
    q: tuple[float, float, float, float]
    qd: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Attachment:
    attached: bool = True
    tilt: tuple[float, float] = (0.0, 0.0)
    tilt_stiffness: float = 1.2    # N*m/rad
    tilt_damping: float = 0.06     # N*m*s/rad
    detach_angle: float = 0.35     # rad

    def as_array(self) -> np.ndarray:
        return np.array([self.tilt_stiffness, self.tilt_damping,
                         self.detach_angle])


def apply_control(js: JointState, u, model: ManipulatorModel,
                  dt: float) -> JointState:
    """Saturated velocity command: rates clamp to the speed caps, positions
    clamp to the joint limits.  Saturation is not an error."""
    qd = tuple(min(max(ui, -vm), vm) for ui, vm in zip(u, model.max_speed))
    q = tuple(min(max(qi + dt * di, lo), hi)
              for qi, di, lo, hi in zip(js.q, qd, model.q_lower, model.q_upper))
    return JointState(q=q, qd=qd)


def tip_pose(js: JointState, model: ManipulatorModel,
             att: Attachment | None = None) -> BodyPose:
    """Nominal pose of the gripped object: the tip position dropped by the
    tip offset along the (possibly tilted) attachment axis, yaw from the
    wrist joint."""
    t1, t2 = att.tilt if att is not None else (0.0, 0.0)
    cx, cy, cz = K.gripped_center(js.q[0], js.q[1], js.q[2], t1, t2,
                                  model.tip_offset)
    return BodyPose(cx, cy, cz, js.q[3], tilt=(t1, t2))


def inverse_placement(pose: BodyPose, model: ManipulatorModel) -> JointState:
    """Joint targets putting the (untilted) gripped object at a pose; the
    affine inverse of tip_pose."""
    return JointState(q=(pose.x, pose.y, pose.z + model.tip_offset, pose.yaw))


def update_attachment(att: Attachment, torque, dt: float) -> Attachment:
    """Quasi-static spring-damper tilt update driven by the contact torque
    about the pump tip; flips attached off past the detach angle (permanent
    within a trial -- there is no re-attach)."""
    if not att.attached:
        return att
    k, c = att.tilt_stiffness, att.tilt_damping
    t1 = att.tilt[0] + dt * (torque[0] - k * att.tilt[0]) / c
    t2 = att.tilt[1] + dt * (torque[1] - k * att.tilt[1]) / c
    still_on = math.hypot(t1, t2) <= att.detach_angle
    return replace(att, tilt=(t1, t2), attached=still_on)


def ee_force(scene, new_object_id: str) -> tuple[float, float, float]:
    """End-effector force sensor: the net contact force on the gripped
    object from the most recent step."""
    from . import physics
    return physics.net_contact_force(scene, new_object_id)
