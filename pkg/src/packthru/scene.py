"""Container, rigid objects, poses, and the containment predicate.

All value types are plain dataclasses with float tuples so that equality is
bit-exact and cloning is cheap.  Geometry follows a 2.5D parameterization:
residents carry (x, y, z, yaw) with a 4-velocity, and only the gripped
object uses the tilt pair (pump-tip compliance).  All coordinates live in
the container frame: the interior is [0, W] x [0, L] x [0, H] with the
floor at z = 0; the world-frame anchor appears only in documents.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field


class SceneFormatError(ValueError):
    """Raised on malformed scene documents, naming the offending field."""


class UnknownBodyError(KeyError):
    """Raised when an operation references a body id not in the scene."""


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder dimensions must be positive")

    @property
    def circumradius(self) -> float:
        return self.radius

    @property
    def half_height(self) -> float:
        return 0.5 * self.height


@dataclass(frozen=True)
class Box:
    half_x: float
    half_y: float
    half_z: float

    def __post_init__(self):
        if min(self.half_x, self.half_y, self.half_z) <= 0:
            raise ValueError("box half-extents must be positive")

    @property
    def circumradius(self) -> float:
        return math.hypot(self.half_x, self.half_y)

    @property
    def half_height(self) -> float:
        return self.half_z


ShapeGeom = Cylinder | Box


@dataclass(frozen=True)
class BodyPose:
    x: float
    y: float
    z: float
    yaw: float = 0.0
    tilt: tuple[float, float] = (0.0, 0.0)

    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


ZERO_VEL = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RigidObject:
    id: str
    geom: ShapeGeom
    mass: float
    pose: BodyPose
    velocity: tuple[float, float, float, float] = ZERO_VEL

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"object {self.id!r}: mass must be positive")
        if not all(math.isfinite(v) for v in self.velocity):
            raise ValueError(f"object {self.id!r}: velocity must be finite")


@dataclass(frozen=True)
class Container:
    width: float
    length: float
    height: float
    h_max: float
    wall_thickness: float = 0.01
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.width, self.length, self.height) <= 0:
            raise ValueError("container dimensions must be positive")
        if not (0 < self.h_max <= self.height):
            raise ValueError("h_max must be in (0, height]")
        if self.wall_thickness <= 0:
            raise ValueError("wall_thickness must be positive")


@dataclass(frozen=True)
class SceneConfig:
    container: Container
    objects: tuple[RigidObject, ...]
    new_object: RigidObject
    rng_seed: int = 0

    def __post_init__(self):
        ids = [o.id for o in self.all_bodies()]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate object ids: {ids}")

    def all_bodies(self) -> tuple[RigidObject, ...]:
        return self.objects + (self.new_object,)

    def body(self, body_id: str) -> RigidObject:
        for o in self.all_bodies():
            if o.id == body_id:
                return o
        raise UnknownBodyError(body_id)

    def resident_index(self, body_id: str) -> int:
        for i, o in enumerate(self.objects):
            if o.id == body_id:
                return i
        raise UnknownBodyError(body_id)


def make_scene(container: Container, objects, new_object: RigidObject,
               rng_seed: int = 0) -> SceneConfig:
    return SceneConfig(container, tuple(objects), new_object, rng_seed)


def footprint_half_extents(geom: ShapeGeom, yaw: float) -> tuple[float, float]:
    """Horizontal half extents of the footprint along the container axes."""
    if isinstance(geom, Cylinder):
        return geom.radius, geom.radius
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    return geom.half_x * c + geom.half_y * s, geom.half_x * s + geom.half_y * c


def is_contained(obj: RigidObject, container: Container, tol: float = 0.0) -> bool:
    """Whether the body's volume lies inside the container interior with its
    top at or below h_max.  tol expands the interior, letting callers accept
    the bounded interpenetration the soft contact model leaves behind."""
    p = obj.pose
    ex, ey = footprint_half_extents(obj.geom, p.yaw)
    hz = obj.geom.half_height
    return (
        p.x - ex >= -tol
        and p.x + ex <= container.width + tol
        and p.y - ey >= -tol
        and p.y + ey <= container.length + tol
        and p.z - hz >= -tol
        and p.z + hz <= container.h_max + tol
    )


def surface_points(geom: ShapeGeom, pose: BodyPose, n_angles: int = 8,
                   n_heights: int = 3):
    """Deterministic surface sample (the 26-point hull at the defaults);
    used by containment cross-checks, not by the predicate itself."""
    pts = []
    if isinstance(geom, Cylinder):
        for k in range(n_heights):
            z = pose.z - geom.half_height + geom.height * k / (n_heights - 1)
            for a in range(n_angles):
                ang = 2.0 * math.pi * a / n_angles
                pts.append((pose.x + geom.radius * math.cos(ang),
                            pose.y + geom.radius * math.sin(ang), z))
        pts.append((pose.x, pose.y, pose.z - geom.half_height))
        pts.append((pose.x, pose.y, pose.z + geom.half_height))
    else:
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        for sx in (-1.0, 0.0, 1.0):
            for sy in (-1.0, 0.0, 1.0):
                for sz in (-1.0, 0.0, 1.0):
                    if sx == sy == sz == 0.0:
                        continue
                    lx, ly = sx * geom.half_x, sy * geom.half_y
                    pts.append((pose.x + lx * c - ly * s,
                                pose.y + lx * s + ly * c,
                                pose.z + sz * geom.half_z))
    return pts


def teleport(scene: SceneConfig, body_id: str, pose: BodyPose) -> SceneConfig:
    """Move a body to a pose with zero velocity; overlap with other bodies is
    permitted (penetration is resolved only by later physics steps)."""
    scene.body(body_id)
    def moved(o: RigidObject) -> RigidObject:
        if o.id != body_id:
            return o
        return dataclasses.replace(o, pose=pose, velocity=ZERO_VEL)
    return dataclasses.replace(
        scene,
        objects=tuple(moved(o) for o in scene.objects),
        new_object=moved(scene.new_object),
    )


def get_pose(scene: SceneConfig, body_id: str) -> BodyPose:
    return scene.body(body_id).pose


# ---------------------------------------------------------------------------
# Scene documents
# ---------------------------------------------------------------------------


def _geom_to_doc(geom: ShapeGeom) -> dict:
    if isinstance(geom, Cylinder):
        return {"type": "cylinder", "radius": geom.radius, "height": geom.height}
    return {"type": "box", "half_x": geom.half_x, "half_y": geom.half_y,
            "half_z": geom.half_z}


def _object_to_doc(obj: RigidObject) -> dict:
    doc = {
        "id": obj.id,
        "geom": _geom_to_doc(obj.geom),
        "mass": obj.mass,
        "pose": {"x": obj.pose.x, "y": obj.pose.y, "z": obj.pose.z,
                 "yaw": obj.pose.yaw},
        "vel": list(obj.velocity),
    }
    if obj.pose.tilt != (0.0, 0.0):
        doc["tilt"] = list(obj.pose.tilt)
    return doc


def serialize_scene(scene: SceneConfig) -> bytes:
    c = scene.container
    doc = {
        "container": {"w": c.width, "l": c.length, "h": c.height,
                      "h_max": c.h_max, "wall": c.wall_thickness,
                      "origin": list(c.origin)},
        "objects": [_object_to_doc(o) for o in scene.objects],
        "new_object": _object_to_doc(scene.new_object),
        "seed": scene.rng_seed,
    }
    return json.dumps(doc, indent=1).encode()


def _need(doc: dict, key: str, where: str):
    if key not in doc:
        raise SceneFormatError(f"missing field {key!r} in {where}")
    return doc[key]


def _geom_from_doc(doc: dict, where: str) -> ShapeGeom:
    kind = _need(doc, "type", where)
    if kind == "cylinder":
        return Cylinder(_need(doc, "radius", where), _need(doc, "height", where))
    if kind == "box":
        return Box(_need(doc, "half_x", where), _need(doc, "half_y", where),
                   _need(doc, "half_z", where))
    raise SceneFormatError(f"unknown geom type {kind!r} in {where}")


def _object_from_doc(doc: dict, where: str) -> RigidObject:
    pose_doc = _need(doc, "pose", where)
    pose = BodyPose(
        _need(pose_doc, "x", f"{where}.pose"),
        _need(pose_doc, "y", f"{where}.pose"),
        _need(pose_doc, "z", f"{where}.pose"),
        _need(pose_doc, "yaw", f"{where}.pose"),
        tilt=tuple(doc.get("tilt", (0.0, 0.0))),
    )
    return RigidObject(
        id=_need(doc, "id", where),
        geom=_geom_from_doc(_need(doc, "geom", where), f"{where}.geom"),
        mass=_need(doc, "mass", where),
        pose=pose,
        velocity=tuple(doc.get("vel", ZERO_VEL)),
    )


def parse_scene(data: bytes | str) -> SceneConfig:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"invalid JSON at line {e.lineno} col {e.colno}: "
                               f"{e.msg}") from e
    if not isinstance(doc, dict):
        raise SceneFormatError("top-level document must be an object")
    cdoc = _need(doc, "container", "document")
    container = Container(
        width=_need(cdoc, "w", "container"),
        length=_need(cdoc, "l", "container"),
        height=_need(cdoc, "h", "container"),
        h_max=_need(cdoc, "h_max", "container"),
        wall_thickness=_need(cdoc, "wall", "container"),
        origin=tuple(cdoc.get("origin", (0.0, 0.0, 0.0))),
    )
    objects = tuple(
        _object_from_doc(o, f"objects[{i}]")
        for i, o in enumerate(_need(doc, "objects", "document"))
    )
    new_object = _object_from_doc(_need(doc, "new_object", "document"), "new_object")
    return SceneConfig(container, objects, new_object, _need(doc, "seed", "document"))


def load_scene(path) -> SceneConfig:
    with open(path, "rb") as f:
        return parse_scene(f.read())


def save_scene(scene: SceneConfig, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_scene(scene))
