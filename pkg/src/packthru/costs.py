"""Residual cost system: residual stack, stage weight tables, obstacle
repulsion decay, and Gauss-Newton expansions for the trajectory optimizer.

Cost = sum_i w_i * n_i(r_i) over the residual stack, with n_i = r^2/2 by
default (a smooth-abs option exists per family for experimentation).
Residual first derivatives come from central finite differences; second
order terms use the Gauss-Newton approximation J' W diag(n'') J, which is
symmetric PSD by construction.

The end-effector force residual is a 3-vector with per-axis weights.  The
upright residual equals |tilt|, which in this parameterization is exactly
the angle between the gripped object's axis and world vertical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _solver_kernels as SK
from .scene import BodyPose
from .world import World

RESIDUAL_FAMILIES = ("pos_x", "pos_y", "pos_z", "up", "ee_force", "rjl", "rjv", "or")

STAGE_PRE_PACK = "PRE_PACK"
STAGE_INSERT = "INSERT"
STAGE_FINE_TUNE = "FINE_TUNE"


@dataclass(frozen=True)
class StageWeights:
    """One row of the stage weight table: running weight w and terminal
    weight w_f per residual family (per-axis for the force, per-joint for
    the joint families)."""
    stage: str
    pos_w: tuple[float, float, float]
    pos_wf: tuple[float, float, float]
    up_w: float
    up_wf: float
    ee_w: tuple[float, float, float]
    ee_wf: tuple[float, float, float]
    rjl_w: tuple[float, float, float, float]
    rjl_wf: tuple[float, float, float, float]
    rjv_w: tuple[float, float, float, float]
    rjv_wf: tuple[float, float, float, float]
    or_w: float
    or_wf: float


def table1_profile() -> dict[str, StageWeights]:
    """The default stage-weight table.

    The per-joint velocity emphasis in the insertion row lands on the
    lateral-x and vertical joints (the axes doing the displacing), with the
    light weight on the remaining two.
    """
    return {
        STAGE_PRE_PACK: StageWeights(
            stage=STAGE_PRE_PACK,
            pos_w=(2.0, 2.0, 0.1), pos_wf=(100.0, 100.0, 50.0),
            up_w=0.1, up_wf=20.0,
            ee_w=(0.0, 0.0, 0.0), ee_wf=(0.0, 0.0, 0.0),
            rjl_w=(0.1,) * 4, rjl_wf=(0.1,) * 4,
            rjv_w=(0.02,) * 4, rjv_wf=(1.0,) * 4,
            or_w=0.0, or_wf=0.0,
        ),
        STAGE_INSERT: StageWeights(
            stage=STAGE_INSERT,
            pos_w=(1.0, 1.0, 1.0), pos_wf=(100.0, 100.0, 200.0),
            up_w=0.0, up_wf=0.0,
            ee_w=(1.0, 1.0, 1.0), ee_wf=(1.0, 1.0, 1.0),
            rjl_w=(0.1,) * 4, rjl_wf=(0.1,) * 4,
            rjv_w=(0.15, 0.02, 0.15, 0.02), rjv_wf=(0.15, 0.02, 0.15, 0.02),
            or_w=1.0, or_wf=1.0,
        ),
        STAGE_FINE_TUNE: StageWeights(
            stage=STAGE_FINE_TUNE,
            pos_w=(1.0, 1.0, 0.01), pos_wf=(200.0, 200.0, 20.0),
            up_w=0.1, up_wf=20.0,
            ee_w=(0.0, 0.0, 0.0), ee_wf=(0.0, 0.0, 0.0),
            rjl_w=(0.1,) * 4, rjl_wf=(0.1,) * 4,
            rjv_w=(0.0,) * 4, rjv_wf=(0.0,) * 4,
            or_w=0.0, or_wf=0.0,
        ),
    }


@dataclass(frozen=True)
class DecaySchedule:
    """Linear ramp of the obstacle repulsion weight down to zero."""
    w_obs_0: float = 1.0
    horizon: int = 60
    t: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("decay horizon must be positive")

    def advance(self) -> "DecaySchedule":
        return replace(self, t=self.t + 1)


def decayed_or_weight(sched: DecaySchedule) -> float:
    return max(0.0, sched.w_obs_0 - sched.t * sched.w_obs_0 / sched.horizon)


@dataclass(frozen=True)
class GoalSpec:
    target: BodyPose
    collision_ids: tuple[str, ...] = ()
    pack_pose: BodyPose | None = None


@dataclass(frozen=True)
class ResidualVector:
    values: np.ndarray
    labels: tuple[str, ...]

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])


@dataclass(frozen=True)
class NormConfig:
    """Norm selection per residual family: 'quad' (r^2/2) or 'smooth_abs'
    (sqrt(r^2 + eps^2) - eps)."""
    kinds: dict[str, str] | None = None
    eps: float = 1e-3


class CostModel:
    """Packed residual-cost context bound to one world and goal.

    Residual layout (fixed for the life of the model): 3 position errors,
    upright, 3 force components, 4 joint-limit, 4 joint-velocity, then one
    repulsion entry per collision-list id.
    """

    FD_POS = 1e-6       # positions / velocities
    FD_CONTACT = 1e-5   # columns the contact force reacts to
    EE_MARGIN = 1e-3    # proximity window for force-relevant residents

    def __init__(self, world: World, goal: GoalSpec, weights: StageWeights,
                 or_weight: float | None = None, norms: NormConfig | None = None):
        self.world = world
        self.goal = goal
        self.weights = weights
        scene = world.scene_template
        self.gidx = np.array(
            [scene.resident_index(i) for i in goal.collision_ids], dtype=np.int64)
        g = len(self.gidx)
        self.n_residuals = SK.N_FIXED + g
        ow = weights.or_w if or_weight is None else or_weight
        owf = weights.or_wf if or_weight is None else or_weight
        self.w_run = np.concatenate([
            np.asarray(weights.pos_w), [weights.up_w], np.asarray(weights.ee_w),
            np.asarray(weights.rjl_w), np.asarray(weights.rjv_w),
            np.full(g, ow)])
        self.w_fin = np.concatenate([
            np.asarray(weights.pos_wf), [weights.up_wf], np.asarray(weights.ee_wf),
            np.asarray(weights.rjl_wf), np.asarray(weights.rjv_wf),
            np.full(g, owf)])
        kinds = (norms.kinds if norms and norms.kinds else {})
        eps = norms.eps if norms else 1e-3
        fam_of = (["pos_x", "pos_y", "pos_z", "up"] + ["ee_force"] * 3
                  + ["rjl"] * 4 + ["rjv"] * 4 + ["or"] * g)
        self.norm_kind = np.array(
            [SK.NORM_SMOOTH_ABS if kinds.get(f) == "smooth_abs" else SK.NORM_QUAD
             for f in fam_of], dtype=np.int64)
        self.norm_eps = np.full(self.n_residuals, eps)
        self.labels = tuple(
            ["pos_x", "pos_y", "pos_z", "up", "ee_fx", "ee_fy", "ee_fz"]
            + [f"rjl_{i}" for i in range(4)] + [f"rjv_{i}" for i in range(4)]
            + [f"or_{i}" for i in goal.collision_ids])
        self.goal_xyz = np.array([goal.target.x, goal.target.y, goal.target.z])
        self.qmid = world.model.midpoints()
        self.ctx = (self.goal_xyz, self.gidx, self.qmid, self.w_run, self.w_fin,
                    self.norm_kind, self.norm_eps, self.FD_POS, self.FD_CONTACT,
                    self.EE_MARGIN)

    # -- spec operations ------------------------------------------------------

    def residuals(self, x: np.ndarray, u=None) -> ResidualVector:
        r = np.empty(self.n_residuals)
        use_u = u is not None
        uu = np.asarray(u, dtype=float) if use_u else np.zeros(4)
        SK.residual_vector(x, uu, use_u, True, self.world.geom, self.world.dyn,
                           self.world.bufs, self.goal_xyz, self.gidx,
                           self.qmid, r)
        return ResidualVector(values=r, labels=self.labels)

    def running_cost(self, x: np.ndarray, u) -> float:
        r = self.residuals(x, u).values
        return float(SK.weighted_cost(r, self.w_run, self.norm_kind, self.norm_eps))

    def terminal_cost(self, x: np.ndarray) -> float:
        r = self.residuals(x, None).values
        return float(SK.weighted_cost(r, self.w_fin, self.norm_kind, self.norm_eps))

    def expansion(self, x: np.ndarray, u, terminal: bool = False):
        """Gauss-Newton cost expansion (l_x, l_u, l_xx, l_uu, l_ux) at a
        point; raises on non-finite Jacobian entries naming the residual."""
        n, m = self.world.n, self.world.m
        lx = np.empty(n)
        lu = np.empty(m)
        lxx = np.empty((n, n))
        luu = np.empty((m, m))
        lux = np.empty((m, n))
        uu = np.zeros(4) if u is None else np.asarray(u, dtype=float)
        SK.gn_expand_point(x, uu, terminal, self.world.geom, self.world.dyn,
                           self.world.bufs, self.ctx, lx, lu, lxx, luu, lux)
        for name, arr in (("l_x", lx), ("l_u", lu), ("l_xx", lxx),
                          ("l_uu", luu), ("l_ux", lux)):
            if not np.isfinite(arr).all():
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise FloatingPointError(
                    f"non-finite {name} entry at index {tuple(bad)}")
        return lx, lu, lxx, luu, lux

    def trajectory_expansion(self, X, U, lx, lu, lxx, luu, lux) -> float:
        return SK.expand_trajectory(X, U, self.world.geom, self.world.dyn,
                                    self.world.bufs, self.ctx, lx, lu, lxx,
                                    luu, lux)

    def trajectory_cost(self, X, U) -> float:
        return SK.trajectory_cost(X, U, self.world.geom, self.world.dyn,
                                  self.world.bufs, self.ctx)

    def step_costs(self, X, U) -> tuple[np.ndarray, float]:
        """Per-step running costs and the terminal cost (Trajectory record)."""
        T = U.shape[0]
        costs = np.empty(T)
        for t in range(T):
            costs[t] = self.running_cost(X[t], U[t])
        return costs, self.terminal_cost(X[T])


def eval_residuals(x, u, goal: GoalSpec, world: World,
                   weights: StageWeights | None = None) -> ResidualVector:
    """Residual stack at one state; evaluation order and layout are stable."""
    w = weights or table1_profile()[STAGE_INSERT]
    return CostModel(world, goal, w).residuals(x, u)


def running_cost(x, u, weights: StageWeights, goal: GoalSpec,
                 world: World) -> float:
    return CostModel(world, goal, weights).running_cost(x, u)


def gauss_newton_expansion(x, u, weights: StageWeights, goal: GoalSpec,
                           world: World, terminal: bool = False):
    return CostModel(world, goal, weights).expansion(x, u, terminal)
