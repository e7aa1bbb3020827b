"""Physics-informed placement planner.

Samples candidate poses on the container floor, teleports the new object
there, integrates objects-only physics to settle the scene, and scores each
candidate by how much it disturbed the residents (vertical motion penalized
an order of magnitude harder than lateral) plus a stiff penalty on
penetrations that the settle window failed to resolve.  The best settled
pose is returned together with the residents overlapping the sampled pose.

The manipulator is frozen out during settling: candidate evaluation is a
property of the container contents alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import physics
from .physics import ContactParams, StepParams
from .scene import (BodyPose, SceneConfig, ShapeGeom, get_pose, is_contained,
                    teleport)

log = logging.getLogger(__name__)


class PlacementError(RuntimeError):
    """No feasible placement: every candidate faulted (caller may raise S)."""


@dataclass(frozen=True)
class PlannerConfig:
    samples: int = 300
    settle_steps: int = 30
    axis_weights: tuple[float, float, float] = (1.0, 1.0, 10.0)
    beta: float = 1000.0
    rng_seed: int = 0
    step: StepParams = field(default_factory=StepParams)
    contact: ContactParams = field(default_factory=ContactParams)

    def __post_init__(self):
        if self.samples < 1 or self.settle_steps < 1:
            raise ValueError("samples and settle_steps must be >= 1")
        if min(self.axis_weights) < 0 or self.beta < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class PlacementCandidate:
    sampled_pose: BodyPose
    settled_pose: BodyPose
    cost: float
    collision_ids: tuple[str, ...]
    settled_scene: SceneConfig | None = None


@dataclass(frozen=True)
class PlacementResult:
    pack_pose: BodyPose
    collision_ids: tuple[str, ...]
    candidates: tuple[PlacementCandidate, ...]
    best_index: int


def sample_pose(container, geom: ShapeGeom, rng: np.random.Generator) -> BodyPose:
    """Uniform pose over the container floor, shrunk by the circumscribed
    radius so the footprint can fit at any yaw; boxes draw a yaw in [0, pi)
    (180-degree symmetry), cylinders stay at zero."""
    rc = geom.circumradius
    if 2.0 * rc >= container.width or 2.0 * rc >= container.length:
        raise ValueError(
            f"geometry (circumradius {rc:.3f}) does not fit in the "
            f"{container.width:.3f} x {container.length:.3f} container")
    x = rng.uniform(rc, container.width - rc)
    y = rng.uniform(rc, container.length - rc)
    from .scene import Box
    yaw = rng.uniform(0.0, math.pi) if isinstance(geom, Box) else 0.0
    return BodyPose(x, y, physics.support_height(geom), yaw)


def disturbance_cost(p0: SceneConfig, settled: SceneConfig,
                     cfg: PlannerConfig) -> float:
    """Axis-weighted resident displacement plus beta times the lasting
    penetration of the settled scene."""
    ids0 = [o.id for o in p0.objects]
    ids1 = [o.id for o in settled.objects]
    if ids0 != ids1:
        raise ValueError(f"resident id mismatch: {ids0} vs {ids1}")
    wx, wy, wz = cfg.axis_weights
    total = 0.0
    for a, b in zip(p0.objects, settled.objects):
        total += math.sqrt((wx * (b.pose.x - a.pose.x)) ** 2
                           + (wy * (b.pose.y - a.pose.y)) ** 2
                           + (wz * (b.pose.z - a.pose.z)) ** 2)
    return total + cfg.beta * physics.penetration_metric(settled, cfg.contact)


def collisions_at(scene: SceneConfig, body_id: str) -> tuple[str, ...]:
    """Residents overlapping the given body at its current pose."""
    resident_ids = {o.id for o in scene.objects}
    hits = []
    for c in physics.detect_contacts(scene):
        if c.body_a == body_id and c.body_b in resident_ids:
            hits.append(c.body_b)
        elif c.body_b == body_id and c.body_a in resident_ids:
            hits.append(c.body_a)
    return tuple(dict.fromkeys(hits))


def evaluate_candidate(p0: SceneConfig, pose: BodyPose,
                       cfg: PlannerConfig,
                       keep_scene: bool = False) -> PlacementCandidate:
    """Teleport, settle, score; the collision list is read at the sampled
    (pre-settle) pose inside the settled scene, mirroring the planner's
    teleport-back step."""
    new_id = p0.new_object.id
    try:
        placed = teleport(p0, new_id, pose)
        settled = physics.settle(placed, cfg.settle_steps, cfg.step, cfg.contact)
        settled_pose = get_pose(settled, new_id)
        cost = disturbance_cost(p0, settled, cfg)
        back = teleport(settled, new_id, pose)
        g = collisions_at(back, new_id)
    except physics.PhysicsFault:
        return PlacementCandidate(sampled_pose=pose, settled_pose=pose,
                                  cost=math.inf, collision_ids=())
    return PlacementCandidate(
        sampled_pose=pose, settled_pose=settled_pose, cost=cost,
        collision_ids=g, settled_scene=settled if keep_scene else None)


def plan_placement(p0: SceneConfig, cfg: PlannerConfig) -> PlacementResult:
    """Evaluate cfg.samples candidates and return the argmin (ties broken by
    the lowest sample index) with its collision list."""
    rng = np.random.default_rng(cfg.rng_seed)
    geom = p0.new_object.geom
    candidates = []
    best = -1
    for i in range(cfg.samples):
        pose = sample_pose(p0.container, geom, rng)
        cand = evaluate_candidate(p0, pose, cfg)
        candidates.append(cand)
        if math.isfinite(cand.cost) and (best < 0 or cand.cost < candidates[best].cost):
            best = i
    if best < 0:
        raise PlacementError(
            f"no feasible placement among {cfg.samples} samples")
    chosen = candidates[best]
    if chosen.cost < math.inf:
        probe = teleport(p0, p0.new_object.id, chosen.settled_pose)
        k_term = physics.penetration_metric(
            physics.settle(probe, cfg.settle_steps, cfg.step, cfg.contact),
            cfg.contact)
        if k_term == 0.0 and not is_contained(
                probe.body(p0.new_object.id), p0.container,
                tol=cfg.contact.smoothing_eps):
            log.warning("chosen settled pose %s is not contained", chosen.settled_pose)
    return PlacementResult(pack_pose=chosen.settled_pose,
                           collision_ids=chosen.collision_ids,
                           candidates=tuple(candidates), best_index=best)
