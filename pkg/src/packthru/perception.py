"""Simulated occlusion-prone pose sensor and physics-based state estimation.

The sensor hides residents inside a shadow disc under the gantry tip (the
robot and the gripped object block the view from above) and drops readings
i.i.d.; surviving readings carry Gaussian noise.  The estimator keeps a
belief world stepped with the executed controls: observed objects snap to
their (noisy) readings, everything else moves by physics prediction from
its last estimate.  Manipulator state is proprioceptive ground truth (the
belief gantry integrates the same commands as the real one).

Also home to the failure metrics: mean true-vs-estimated object position
deviation, mean rotation deviation of the gripped object, and the mean
per-step count of physics-estimated objects (all normalized per step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .manipulator import JointState
from .scene import BodyPose, SceneConfig
from .world import World


@dataclass(frozen=True)
class SensorModel:
    occlusion_radius: float = 0.06   # shadow disc under the tip, m
    dropout_prob: float = 0.05       # per object per reading
    pos_noise_sigma: float = 0.001   # m
    yaw_noise_sigma: float = 0.01    # rad
    period: int = 5                  # control steps between readings

    def __post_init__(self):
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.pos_noise_sigma < 0 or self.yaw_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.period < 1:
            raise ValueError("period must be >= 1")


def observe_arrays(res_pose: np.ndarray, tip_xy, sensor: SensorModel,
                   rng: np.random.Generator):
    """Per-resident noisy pose rows or NaN when unobserved.

    One dropout uniform and four noise normals are drawn per object
    regardless of visibility so the stream is deterministic in shape.
    """
    n = res_pose.shape[0]
    out = np.full((n, 4), np.nan)
    for i in range(n):
        u = rng.uniform()
        noise = rng.normal(size=4)
        dx = res_pose[i, 0] - tip_xy[0]
        dy = res_pose[i, 1] - tip_xy[1]
        if math.hypot(dx, dy) < sensor.occlusion_radius:
            continue
        if u < sensor.dropout_prob:
            continue
        out[i, :3] = res_pose[i, :3] + sensor.pos_noise_sigma * noise[:3]
        out[i, 3] = res_pose[i, 3] + sensor.yaw_noise_sigma * noise[3]
    return out


def observe(true_scene: SceneConfig, tip_position, sensor: SensorModel,
            rng: np.random.Generator) -> dict[str, BodyPose | None]:
    """Sensor reading over the scene residents (the gripped object is not a
    vision target; its belief comes from proprioception plus the attachment
    model)."""
    poses = np.array([[o.pose.x, o.pose.y, o.pose.z, o.pose.yaw]
                      for o in true_scene.objects]).reshape(-1, 4)
    rows = observe_arrays(poses, tip_position[:2], sensor, rng)
    out = {}
    for o, row in zip(true_scene.objects, rows):
        out[o.id] = None if math.isnan(row[0]) else BodyPose(*row)
    return out


class TrackRecord:
    """Belief state of the estimator: last observed pose and timestamp per
    tracked object plus the current physics-propagated estimate."""

    def __init__(self, world: World, joints: JointState, sensor: SensorModel,
                 rng: np.random.Generator):
        self.world = world
        self.sensor = sensor
        self.rng = rng
        self.x = world.initial_state(joints)
        self.ids = [o.id for o in world.scene_template.objects]
        n = len(self.ids)
        self.observed_now = np.zeros(n, dtype=bool)
        self.last_observed_pose = {i: self.x[8 + 8 * i:12 + 8 * i].copy()
                                   for i in range(n)}
        self.last_observed_step = dict.fromkeys(range(n), 0)
        self.steps = 0

    def advance(self, u, true_res_pose: np.ndarray, tip_xy) -> np.ndarray:
        """One estimation step: physics prediction with the executed control,
        then snap any freshly observed objects to their readings."""
        self.x = self.world.step(self.x, u)
        self.steps += 1
        self.observed_now[:] = False
        if self.steps % self.sensor.period == 0 and len(self.ids) > 0:
            rows = observe_arrays(true_res_pose, tip_xy, self.sensor, self.rng)
            for i in range(len(self.ids)):
                if math.isnan(rows[i, 0]):
                    continue
                b = 8 + 8 * i
                self.x[b:b + 4] = rows[i]
                self.last_observed_pose[i] = rows[i].copy()
                self.last_observed_step[i] = self.steps
                self.observed_now[i] = True
        return self.x

    def estimate(self) -> np.ndarray:
        return self.x.copy()


def estimate_state(track: TrackRecord, true_res_pose: np.ndarray, tip_xy,
                   executed_control) -> np.ndarray:
    """Functional wrapper over TrackRecord.advance."""
    return track.advance(executed_control, true_res_pose, tip_xy)


@dataclass(frozen=True)
class FailureMetrics:
    m_pos: float   # mean per-object position deviation, m
    m_rot: float   # mean gripped-object rotation deviation, rad
    m_per: float   # mean physics-estimated object count per step


def tilt_angle_between(tilt_a, tilt_b) -> float:
    ax = K.tilt_axis(tilt_a[0], tilt_a[1])
    bx = K.tilt_axis(tilt_b[0], tilt_b[1])
    dot = ax[0] * bx[0] + ax[1] * bx[1] + ax[2] * bx[2]
    return math.acos(min(1.0, max(-1.0, dot)))


def compute_metrics(record) -> FailureMetrics:
    """Failure metrics from a trial record (perfect perception gives all
    zeros).  Position deviation runs over the tracked objects; rotation is
    the angle between the true and believed attachment axes."""
    steps = record.n_steps
    if steps == 0:
        return FailureMetrics(0.0, 0.0, 0.0)
    tracked = record.tracked_indices
    if len(tracked) > 0:
        true_pos = record.true_res_pose[:steps][:, tracked, :3]
        est_pos = record.est_res_pose[:steps, :, :3]
        err = np.linalg.norm(true_pos - est_pos, axis=2)
        m_pos = float(err.mean())
        m_per = float((~record.observed[:steps]).sum(axis=1).mean())
    else:
        m_pos = 0.0
        m_per = 0.0
    angles = [tilt_angle_between(record.true_tilt[t], record.est_tilt[t])
              for t in range(steps)]
    return FailureMetrics(m_pos=m_pos, m_rot=float(np.mean(angles)), m_per=m_per)
