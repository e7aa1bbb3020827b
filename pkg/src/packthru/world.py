"""Coupled gantry + container dynamics behind a flat state vector.

The World owns the packed geometry arrays and scratch buffers so rollouts,
finite-difference linearization, and force probes can run at kernel speed.
State layout (the single source of truth for Jacobian indexing):

    x[0:4] joint positions, x[4:8] joint rates,
    8 entries per tracked resident (x, y, z, yaw + rates),
    final 2 entries the attachment tilt.

The gripped object is not part of x: while attached its pose is slaved to
the tip composed with the tilt.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import _kernels as K
from .manipulator import Attachment, JointState, ManipulatorModel
from .physics import BodyArrays, ContactParams, PhysicsFault, StepParams
from .scene import BodyPose, SceneConfig


class World:
    def __init__(self, scene: SceneConfig, model: ManipulatorModel,
                 attachment: Attachment, step_params: StepParams,
                 contact: ContactParams):
        self.scene_template = scene
        self.model = model
        self.attachment = attachment
        self.step_params = step_params
        self.contact = contact
        self.arr = BodyArrays(scene)
        self.n_res = len(scene.objects)
        self.n = 8 + 8 * self.n_res + 2
        self.m = 4
        self.cp = contact.as_array()
        self.qlo = np.asarray(model.q_lower, dtype=float)
        self.qhi = np.asarray(model.q_upper, dtype=float)
        self.vmax = np.asarray(model.max_speed, dtype=float)
        self.ap = attachment.as_array()
        self.geom = (self.n_res, self.arr.gtypes, self.arr.dims, self.arr.rc,
                     self.arr.hh, self.arr.mass, self.arr.iyaw,
                     scene.container.width, scene.container.length)
        self.dyn = (self.cp, step_params.dt, step_params.gravity, self.qlo,
                    self.qhi, self.vmax, model.tip_offset, self.ap)
        self.bufs = (self.arr.pose, self.arr.vel, self.arr.force, self.arr.con)
        # step telemetry
        self.last_fee = np.zeros(3)
        self.last_tau = np.zeros(2)
        self.detached = not attachment.attached

    # -- state vector packing ------------------------------------------------

    def initial_state(self, joints: JointState) -> np.ndarray:
        x = np.empty(self.n)
        x[0:4] = joints.q
        x[4:8] = joints.qd
        for i, o in enumerate(self.scene_template.objects):
            b = 8 + 8 * i
            x[b:b + 4] = (o.pose.x, o.pose.y, o.pose.z, o.pose.yaw)
            x[b + 4:b + 8] = o.velocity
        x[-2:] = self.attachment.tilt
        return x

    def joints_of(self, x: np.ndarray) -> JointState:
        return JointState(q=tuple(x[0:4]), qd=tuple(x[4:8]))

    def tilt_of(self, x: np.ndarray) -> tuple[float, float]:
        return (x[-2], x[-1])

    def gripped_pose(self, x: np.ndarray) -> BodyPose:
        cx, cy, cz = K.gripped_center(x[0], x[1], x[2], x[-2], x[-1],
                                      self.model.tip_offset)
        return BodyPose(cx, cy, cz, x[3], tilt=(x[-2], x[-1]))

    def resident_pose(self, x: np.ndarray, i: int) -> BodyPose:
        b = 8 + 8 * i
        return BodyPose(x[b], x[b + 1], x[b + 2], x[b + 3])

    def scene_of(self, x: np.ndarray) -> SceneConfig:
        """Materialize a SceneConfig at state x (trace/serialization only)."""
        objs = []
        for i, o in enumerate(self.scene_template.objects):
            b = 8 + 8 * i
            objs.append(dataclasses.replace(
                o, pose=BodyPose(x[b], x[b + 1], x[b + 2], x[b + 3]),
                velocity=tuple(x[b + 4:b + 8])))
        gp = self.gripped_pose(x)
        new = dataclasses.replace(self.scene_template.new_object, pose=gp,
                                  velocity=(x[4], x[5], x[6], x[7]))
        return dataclasses.replace(self.scene_template, objects=tuple(objs),
                                   new_object=new)

    # -- dynamics ------------------------------------------------------------

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One coupled step; records end-effector force, tip torque, and the
        detachment latch as side telemetry."""
        out = np.empty(self.n)
        ok, fx, fy, fz, t1, t2, det = K.world_step(
            x, np.asarray(u, dtype=float), out, *self._step_args())
        if not ok:
            raise PhysicsFault("non-finite state in coupled step")
        self.last_fee[:] = (fx, fy, fz)
        self.last_tau[:] = (t1, t2)
        if det:
            self.detached = True
        return out

    def _step_args(self):
        g = self.geom
        return (g[0], g[1], g[2], g[3], g[4], g[5], g[6], g[7], g[8],
                self.cp, self.step_params.dt, self.step_params.gravity,
                self.qlo, self.qhi, self.vmax, self.model.tip_offset, self.ap,
                self.arr.pose, self.arr.vel, self.arr.force, self.arr.con)

    def rollout(self, x0: np.ndarray, U: np.ndarray) -> np.ndarray:
        T = U.shape[0]
        X = np.empty((T + 1, self.n))
        bad = K.rollout_controls(x0, U, X, *self._step_args())
        if bad >= 0:
            raise PhysicsFault(f"non-finite state at rollout step {bad}")
        return X

    def rollout_policy(self, Xn, Un, kff, Kfb, alpha):
        T = Un.shape[0]
        X = np.empty((T + 1, self.n))
        U = np.empty_like(Un)
        bad = K.rollout_policy(Xn, Un, kff, Kfb, alpha, X, U, *self._step_args())
        if bad >= 0:
            return None, None
        return X, U

    def linearize(self, X, U, skip: int, fd_eps: float = 1e-6):
        T = U.shape[0]
        A = np.empty((T, self.n, self.n))
        B = np.empty((T, self.n, self.m))
        bad = K.linearize_trajectory(X, U, skip, fd_eps, *self._step_args(),
                                     A, B)
        if bad >= 0:
            t, col = divmod(bad, 10000)
            raise PhysicsFault(
                f"non-finite dynamics Jacobian entry at t={t}, column {col}")
        return A, B

    def fee_at(self, x: np.ndarray) -> np.ndarray:
        """Contact force on the gripped object as a pure function of x."""
        g = self.geom
        f = K.probe_fee(x, g[0], g[1], g[2], g[3], g[4], g[7], g[8], self.cp,
                        self.model.tip_offset, self.arr.pose, self.arr.vel,
                        self.arr.con)
        return np.asarray(f)

    def with_contact(self, contact: ContactParams) -> "World":
        """Clone sharing the template but stepping under other contact
        parameters (model-mismatch injection)."""
        return World(self.scene_template, self.model,
                     self.attachment, self.step_params, contact)
