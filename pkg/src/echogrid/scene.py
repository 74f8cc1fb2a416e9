"""World geometry, virtual pinhole camera, and simulated marker detection.

Coordinate conventions (used everywhere in this package):

  World frame (right-handed):
    x: right, y: up, z: forward (along the corridor / away from the table edge)
  Camera pose:
    yaw: degrees about +y, positive turns the view toward +x (to the right),
         normalized to (-180, 180]
    pitch: degrees, positive looks up, restricted to [-90, 90]
    roll: fixed at zero (the device is held upright)
  Image frame:
    normalized coordinates (u, v) in [0, 1]^2, u grows rightward, v grows
    downward, principal point at (0.5, 0.5)

Detection replaces a physical camera + fiducial decoder with a geometric
test: a marker is detected when its center projects inside the image, its
distance lies within the active profile's range and its face is not seen
at a grazing angle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

__all__ = [
    "Vec3",
    "CameraPose",
    "CameraIntrinsics",
    "Marker",
    "DetectionProfile",
    "Detection",
    "SphereCollider",
    "Aabb",
    "Scene",
    "SceneConfigError",
    "LOCALIZATION_PROFILE",
    "NAVIGATION_PROFILE",
    "project_point",
    "detect_markers",
    "scene_from_config",
    "scene_to_config",
    "load_scene",
]

SCENE_SCHEMA = "echogrid-scene/1"


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for c in (self.x, self.y, self.z):
            if not math.isfinite(c):
                raise ValueError(f"non-finite component in {self!r}")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scale(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero vector")
        return self.scale(1.0 / n)

    def distance(self, other: "Vec3") -> float:
        return (self - other).norm()

    def horizontal_distance(self, other: "Vec3") -> float:
        """Distance in the ground (x, z) plane, ignoring height."""
        return math.hypot(self.x - other.x, self.z - other.z)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z]


def _normalize_yaw(yaw: float) -> float:
    """Wrap to (-180, 180]."""
    wrapped = math.fmod(yaw, 360.0)
    if wrapped > 180.0:
        wrapped -= 360.0
    elif wrapped <= -180.0:
        wrapped += 360.0
    return wrapped


@dataclass(frozen=True)
class CameraPose:
    position: Vec3
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.pitch <= 90.0:
            raise ValueError(f"pitch {self.pitch} outside [-90, 90]")
        object.__setattr__(self, "yaw", _normalize_yaw(self.yaw))

    def basis(self) -> tuple[Vec3, Vec3, Vec3]:
        """Return (forward, right, image-down) unit vectors in world frame."""
        cy, sy = math.cos(math.radians(self.yaw)), math.sin(math.radians(self.yaw))
        cp, sp = math.cos(math.radians(self.pitch)), math.sin(math.radians(self.pitch))
        forward = Vec3(cp * sy, sp, cp * cy)
        right = Vec3(cy, 0.0, -sy)
        down = right.cross(forward)
        return forward, right, down


@dataclass(frozen=True)
class CameraIntrinsics:
    """Symmetric pinhole FOV model; principal point at image center."""

    h_fov: float = 60.0
    v_fov: float = 45.0

    def __post_init__(self):
        if not 0.0 < self.h_fov < 180.0:
            raise ValueError(f"h_fov {self.h_fov} outside (0, 180)")
        if not 0.0 < self.v_fov < 180.0:
            raise ValueError(f"v_fov {self.v_fov} outside (0, 180)")


@dataclass(frozen=True)
class Marker:
    id: int
    center: Vec3
    normal: Vec3
    size: float
    object_label: str = ""

    def __post_init__(self):
        if abs(self.normal.norm() - 1.0) > 1e-9:
            raise ValueError(f"marker {self.id}: normal is not unit length")
        if self.size <= 0.0:
            raise ValueError(f"marker {self.id}: size must be positive")


@dataclass(frozen=True)
class DetectionProfile:
    min_range: float
    max_range: float
    marker_size: float
    max_view_angle: float = 70.0

    def __post_init__(self):
        if not 0.0 < self.min_range < self.max_range:
            raise ValueError(
                f"invalid range [{self.min_range}, {self.max_range}]"
            )


# Published detection envelopes of the fiducial stack: 4-200 cm with the
# 4.3 cm markers, 14-900 cm with the 17.3 cm markers.
LOCALIZATION_PROFILE = DetectionProfile(0.04, 2.0, 0.043)
NAVIGATION_PROFILE = DetectionProfile(0.14, 9.0, 0.173)


@dataclass(frozen=True)
class Detection:
    marker_id: int
    image_point: tuple[float, float]
    distance: float


@dataclass(frozen=True)
class SphereCollider:
    center: Vec3
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("collider radius must be positive")


@dataclass(frozen=True)
class Aabb:
    min: Vec3
    max: Vec3

    def __post_init__(self):
        if not (self.min.x <= self.max.x and self.min.y <= self.max.y and self.min.z <= self.max.z):
            raise ValueError("bounds min must not exceed max")

    def contains(self, p: Vec3) -> bool:
        return (
            self.min.x <= p.x <= self.max.x
            and self.min.y <= p.y <= self.max.y
            and self.min.z <= p.z <= self.max.z
        )


@dataclass(frozen=True)
class Scene:
    markers: tuple[Marker, ...]
    bounds: Aabb
    colliders: tuple[SphereCollider, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(self, "colliders", tuple(self.colliders))
        seen: set[int] = set()
        for m in self.markers:
            if m.id in seen:
                raise ValueError(f"duplicate marker id {m.id}")
            seen.add(m.id)
            if not self.bounds.contains(m.center):
                raise ValueError(f"marker {m.id} center outside scene bounds")

    def marker_by_id(self, marker_id: int) -> Marker:
        for m in self.markers:
            if m.id == marker_id:
                return m
        raise KeyError(marker_id)


def project_point(pose: CameraPose, intr: CameraIntrinsics, p: Vec3):
    """Project a world point to normalized image coordinates.

    Returns (u, v) if the point is strictly in front of the camera and within
    both FOV half-angles, else None.
    """
    forward, right, down = pose.basis()
    d = p - pose.position
    z_c = d.dot(forward)
    if z_c <= 0.0:
        return None
    tan_x = d.dot(right) / z_c
    tan_y = d.dot(down) / z_c
    u = 0.5 + 0.5 * tan_x / math.tan(math.radians(intr.h_fov) / 2.0)
    v = 0.5 + 0.5 * tan_y / math.tan(math.radians(intr.v_fov) / 2.0)
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        return None
    return (u, v)


def _segment_hits_sphere(a: Vec3, b: Vec3, sphere: SphereCollider) -> bool:
    """True when segment a-b passes through the sphere interior."""
    ab = b - a
    length2 = ab.dot(ab)
    if length2 == 0.0:
        return a.distance(sphere.center) < sphere.radius
    t = max(0.0, min(1.0, (sphere.center - a).dot(ab) / length2))
    closest = a + ab.scale(t)
    return closest.distance(sphere.center) < sphere.radius


def detect_markers(
    scene: Scene,
    pose: CameraPose,
    intr: CameraIntrinsics,
    profile: DetectionProfile,
    occlusion: bool = False,
) -> list[Detection]:
    """Geometric stand-in for the fiducial detector.

    A marker is reported when its center projects into the image, its distance
    lies in [min_range, max_range] and the angle between the viewing ray and
    the marker normal stays below max_view_angle. Output is sorted by marker
    id. With occlusion=True, sphere colliders block the line of sight (spheres
    hugging the marker itself are ignored so an object never hides its own
    marker).
    """
    cos_limit = math.cos(math.radians(profile.max_view_angle))
    out: list[Detection] = []
    for marker in scene.markers:
        uv = project_point(pose, intr, marker.center)
        if uv is None:
            continue
        d = marker.center - pose.position
        dist = d.norm()
        if not profile.min_range <= dist <= profile.max_range:
            continue
        # View angle between the ray back toward the camera and the face normal.
        to_camera = d.scale(-1.0 / dist)
        if to_camera.dot(marker.normal) < cos_limit:
            continue
        if occlusion:
            blocked = False
            for sph in scene.colliders:
                if sph.center.distance(marker.center) <= sph.radius + 1e-6:
                    continue
                if _segment_hits_sphere(pose.position, marker.center, sph):
                    blocked = True
                    break
            if blocked:
                continue
        out.append(Detection(marker.id, uv, dist))
    out.sort(key=lambda det: det.marker_id)
    return out


class SceneConfigError(ValueError):
    """Raised for malformed scene documents, with a field path when known."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _require(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise SceneConfigError(f"missing field '{key}'", path)
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SceneConfigError(f"field '{key}' must be a number", path)
        return float(value)
    if not isinstance(value, kind):
        raise SceneConfigError(f"field '{key}' has wrong type", path)
    return value


def _vec3_from(doc, path: str) -> Vec3:
    if not isinstance(doc, list) or len(doc) != 3:
        raise SceneConfigError("expected [x, y, z]", path)
    for c in doc:
        if not isinstance(c, (int, float)) or isinstance(c, bool):
            raise SceneConfigError("expected numeric components", path)
    return Vec3(float(doc[0]), float(doc[1]), float(doc[2]))


def scene_from_config(text: str) -> Scene:
    """Parse a JSON scene document (schema echogrid-scene/1) into a Scene."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneConfigError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise SceneConfigError("top-level document must be an object")
    schema = doc.get("schema")
    if schema != SCENE_SCHEMA:
        raise SceneConfigError(f"unsupported schema {schema!r}, expected {SCENE_SCHEMA!r}", "schema")

    bounds_doc = _require(doc, "bounds", dict, "bounds")
    bounds = Aabb(
        _vec3_from(_require(bounds_doc, "min", list, "bounds.min"), "bounds.min"),
        _vec3_from(_require(bounds_doc, "max", list, "bounds.max"), "bounds.max"),
    )

    markers: list[Marker] = []
    seen_ids: set[int] = set()
    for i, mdoc in enumerate(_require(doc, "markers", list, "markers")):
        path = f"markers[{i}]"
        if not isinstance(mdoc, dict):
            raise SceneConfigError("expected an object", path)
        mid = _require(mdoc, "id", int, path)
        if mid in seen_ids:
            raise SceneConfigError(f"duplicate marker id {mid}", path)
        seen_ids.add(mid)
        center = _vec3_from(_require(mdoc, "center", list, f"{path}.center"), f"{path}.center")
        normal = _vec3_from(_require(mdoc, "normal", list, f"{path}.normal"), f"{path}.normal")
        if normal.norm() == 0.0:
            raise SceneConfigError("normal must be non-zero", f"{path}.normal")
        size = _require(mdoc, "size_m", float, path)
        if size <= 0:
            raise SceneConfigError("size_m must be positive", path)
        if not bounds.contains(center):
            raise SceneConfigError(f"marker {mid} center outside bounds", f"{path}.center")
        markers.append(
            Marker(mid, center, normal.normalized(), size, str(mdoc.get("label", "")))
        )

    colliders: list[SphereCollider] = []
    for i, cdoc in enumerate(doc.get("colliders", [])):
        path = f"colliders[{i}]"
        if not isinstance(cdoc, dict):
            raise SceneConfigError("expected an object", path)
        center = _vec3_from(_require(cdoc, "center", list, f"{path}.center"), f"{path}.center")
        radius = _require(cdoc, "radius_m", float, path)
        if radius <= 0:
            raise SceneConfigError("radius_m must be positive", path)
        colliders.append(SphereCollider(center, radius))

    return Scene(tuple(markers), bounds, tuple(colliders))


def scene_to_config(scene: Scene) -> str:
    """Serialize a Scene back to its JSON document form (round-trips)."""
    doc = {
        "schema": SCENE_SCHEMA,
        "bounds": {"min": scene.bounds.min.as_list(), "max": scene.bounds.max.as_list()},
        "markers": [
            {
                "id": m.id,
                "center": m.center.as_list(),
                "normal": m.normal.as_list(),
                "size_m": m.size,
                "label": m.object_label,
            }
            for m in scene.markers
        ],
        "colliders": [
            {"center": c.center.as_list(), "radius_m": c.radius} for c in scene.colliders
        ],
    }
    return json.dumps(doc, indent=2)


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_config(fh.read())
