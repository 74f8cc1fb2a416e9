"""Task generation, performance judging, and session logs.

Two task families mirror the experiment: finding three tagged objects on a
table by pointing (localization), and walking a 15 m x 6 m corridor past
eight tagged obstacles (navigation). Generators are pure functions of a
seed. Judging turns a recorded session log into the performance measures:
pointing error distance and per-object time for localization; course time
and per-obstacle seen/missed verdicts for navigation.

World layout:
  localization: table top at y=0.75 spanning x in [-0.75, 0.75],
    z in [0, 0.8]; the participant stands at the z=0 edge midpoint.
  navigation: corridor floor spanning x in [-3, 3], z in [0, 15]; the
    walk goes from the start line at z=0.5 to the finish line at z=14.5.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .encoder import Mode, CellGrid, DEFAULT_GRID
from .scene import (
    Aabb,
    CameraIntrinsics,
    DetectionProfile,
    LOCALIZATION_PROFILE,
    Marker,
    NAVIGATION_PROFILE,
    Scene,
    SphereCollider,
    Vec3,
)

__all__ = [
    "LOG_SCHEMA",
    "TABLE_WIDTH",
    "TABLE_DEPTH",
    "TABLE_HEIGHT",
    "CORRIDOR_LENGTH",
    "CORRIDOR_WIDTH",
    "COLLISION_RADIUS",
    "REPORT_TOLERANCE",
    "LocalizationTask",
    "NavigationTask",
    "Obstacle",
    "SessionEvent",
    "SessionHeader",
    "SessionLog",
    "LocalizationResult",
    "NavigationResult",
    "PointingNoise",
    "EngineConfig",
    "GenerationError",
    "IncompleteLogError",
    "gen_localization",
    "gen_navigation",
    "score_pointing",
    "score_localization",
    "judge_obstacles",
    "find_corridor_path",
    "profile_for_task",
]

LOG_SCHEMA = "echogrid-log/1"

TABLE_WIDTH = 1.5
TABLE_DEPTH = 0.8
TABLE_HEIGHT = 0.75
PLACEMENT_MIN = 0.05
PLACEMENT_MAX = 1.0
MIN_OBJECT_SEPARATION = 0.15
LOCALIZATION_OBJECTS = ("mouse", "phone", "flashlight")
LOCALIZATION_MARKER_SIZE = 0.043

CORRIDOR_LENGTH = 15.0
CORRIDOR_WIDTH = 6.0
OBSTACLE_LABELS = ("chair", "chair", "garbage_bin", "garbage_bin",
                   "bag", "bag", "box", "box")
OBSTACLE_RADIUS = 0.25
OBSTACLE_MARKER_HEIGHT = 0.5
NAVIGATION_MARKER_SIZE = 0.173
OBSTACLE_SEPARATION = 1.0
WALL_CLEARANCE = 1.0
PATH_CLEARANCE = 0.5
START_Z = 0.5
FINISH_Z = 14.5

COLLISION_RADIUS = 0.4
REPORT_TOLERANCE = 0.5
REPORT_MIN_DISTANCE = 0.5

EVENT_KINDS = frozenset({
    "pose", "point_submit", "obstacle_report", "mode_set",
    "task_start", "task_end", "collision",
})


class GenerationError(RuntimeError):
    pass


class IncompleteLogError(ValueError):
    pass


def profile_for_task(task_kind: str) -> DetectionProfile:
    if task_kind == "localization":
        return LOCALIZATION_PROFILE
    if task_kind == "navigation":
        return NAVIGATION_PROFILE
    raise ValueError(f"unknown task kind {task_kind!r}")


@dataclass(frozen=True)
class EngineConfig:
    """Everything the closed simulation loop needs besides the task."""

    mode: Mode
    grid: CellGrid = DEFAULT_GRID
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    profile: DetectionProfile = LOCALIZATION_PROFILE
    tick_hz: float = 30.0
    occlusion: bool = False
    max_duration_s: float = 600.0

    @classmethod
    def for_task(cls, task, mode: Mode, **overrides) -> "EngineConfig":
        kind = "localization" if isinstance(task, LocalizationTask) else "navigation"
        overrides.setdefault("profile", profile_for_task(kind))
        return cls(mode=mode, **overrides)


# -- localization ---------------------------------------------------------------


@dataclass(frozen=True)
class LocalizationTask:
    markers: tuple[Marker, ...]
    seed: int
    table_width: float = TABLE_WIDTH
    table_depth: float = TABLE_DEPTH
    table_height: float = TABLE_HEIGHT
    placement_range: tuple[float, float] = (PLACEMENT_MIN, PLACEMENT_MAX)
    min_separation: float = MIN_OBJECT_SEPARATION

    @property
    def kind(self) -> str:
        return "localization"

    def marker_by_object(self, object_id) -> Marker:
        for m in self.markers:
            if m.id == object_id or m.object_label == object_id:
                return m
        raise KeyError(f"unknown object {object_id!r}")

    def scene(self) -> Scene:
        bounds = Aabb(Vec3(-2.0, 0.0, -1.0), Vec3(2.0, 2.5, 2.0))
        return Scene(self.markers, bounds, ())


def gen_localization(seed: int) -> LocalizationTask:
    """Place the three objects on the table by seeded rejection sampling.

    Placements stay between 5 cm and 1 m of the participant edge midpoint
    and at least 15 cm apart. The acceptance region is large relative to the
    exclusion disks, so sampling terminates.
    """
    rng = np.random.default_rng(seed)
    margin = 0.03  # keep the marker square fully on the table
    placed: list[tuple[float, float]] = []
    while len(placed) < len(LOCALIZATION_OBJECTS):
        x = rng.uniform(-TABLE_WIDTH / 2 + margin, TABLE_WIDTH / 2 - margin)
        z = rng.uniform(margin, TABLE_DEPTH - margin)
        reach = math.hypot(x, z)
        if not PLACEMENT_MIN <= reach <= PLACEMENT_MAX:
            continue
        if any(math.hypot(x - px, z - pz) < MIN_OBJECT_SEPARATION for px, pz in placed):
            continue
        placed.append((x, z))
    markers = tuple(
        Marker(
            id=i + 1,
            center=Vec3(x, TABLE_HEIGHT + 0.01, z),
            normal=Vec3(0.0, 1.0, 0.0),
            size=LOCALIZATION_MARKER_SIZE,
            object_label=label,
        )
        for i, (label, (x, z)) in enumerate(zip(LOCALIZATION_OBJECTS, placed))
    )
    return LocalizationTask(markers=markers, seed=seed)


# -- navigation -------------------------------------------------------------------


@dataclass(frozen=True)
class Obstacle:
    index: int
    label: str
    center: Vec3  # ground point, y = 0
    radius: float
    front_marker_id: int
    back_marker_id: int


@dataclass(frozen=True)
class NavigationTask:
    obstacles: tuple[Obstacle, ...]
    seed: int
    corridor_length: float = CORRIDOR_LENGTH
    corridor_width: float = CORRIDOR_WIDTH
    start_z: float = START_Z
    finish_z: float = FINISH_Z

    @property
    def kind(self) -> str:
        return "navigation"

    def markers(self) -> tuple[Marker, ...]:
        out = []
        for ob in self.obstacles:
            x, z = ob.center.x, ob.center.z
            out.append(Marker(ob.front_marker_id,
                              Vec3(x, OBSTACLE_MARKER_HEIGHT, z - ob.radius),
                              Vec3(0.0, 0.0, -1.0), NAVIGATION_MARKER_SIZE,
                              f"{ob.label}:front"))
            out.append(Marker(ob.back_marker_id,
                              Vec3(x, OBSTACLE_MARKER_HEIGHT, z + ob.radius),
                              Vec3(0.0, 0.0, 1.0), NAVIGATION_MARKER_SIZE,
                              f"{ob.label}:back"))
        return tuple(out)

    def scene(self) -> Scene:
        half_w = self.corridor_width / 2
        bounds = Aabb(Vec3(-half_w, 0.0, 0.0),
                      Vec3(half_w, 3.0, self.corridor_length))
        colliders = tuple(
            SphereCollider(Vec3(ob.center.x, OBSTACLE_MARKER_HEIGHT, ob.center.z),
                           ob.radius)
            for ob in self.obstacles
        )
        return Scene(self.markers(), bounds, colliders)

    def obstacle_for_marker(self, marker_id: int) -> Obstacle:
        for ob in self.obstacles:
            if marker_id in (ob.front_marker_id, ob.back_marker_id):
                return ob
        raise KeyError(marker_id)


def _corridor_grid(obstacles, step: float = 0.25):
    """Occupancy grid over the corridor; a cell is blocked when its center
    comes within obstacle radius + clearance of any obstacle."""
    half_w = CORRIDOR_WIDTH / 2
    nx = int(round(CORRIDOR_WIDTH / step))
    nz = int(round(CORRIDOR_LENGTH / step))
    xs = -half_w + step / 2 + step * np.arange(nx)
    zs = step / 2 + step * np.arange(nz)
    blocked = np.zeros((nx, nz), dtype=bool)
    for ob in obstacles:
        r = ob.radius + PATH_CLEARANCE
        dx = xs[:, None] - ob.center.x
        dz = zs[None, :] - ob.center.z
        blocked |= dx * dx + dz * dz <= r * r
    return xs, zs, blocked


def _grid_path(obstacles, step: float = 0.25):
    """Breadth-first path from the start line to the finish line, or None."""
    xs, zs, blocked = _corridor_grid(obstacles, step)
    nx, nz = blocked.shape
    iz_start = int(np.searchsorted(zs, START_Z))
    iz_goal = int(np.searchsorted(zs, FINISH_Z))
    iz_start = min(iz_start, nz - 1)
    iz_goal = min(iz_goal, nz - 1)
    prev = {}
    queue = deque()
    for ix in range(nx):
        if not blocked[ix, iz_start]:
            node = (ix, iz_start)
            prev[node] = None
            queue.append(node)
    while queue:
        node = queue.popleft()
        ix, iz = node
        if iz == iz_goal:
            path = []
            cur = node
            while cur is not None:
                path.append((float(xs[cur[0]]), float(zs[cur[1]])))
                cur = prev[cur]
            path.reverse()
            return path
        for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (ix + dx, iz + dz)
            if 0 <= nxt[0] < nx and 0 <= nxt[1] < nz and nxt not in prev \
                    and not blocked[nxt]:
                prev[nxt] = node
                queue.append(nxt)
    return None


def find_corridor_path(task: NavigationTask, step: float = 0.25):
    """Collision-free waypoint list from start to finish (x, z) tuples."""
    path = _grid_path(task.obstacles, step)
    if path is None:
        raise GenerationError(f"no path through layout (seed {task.seed})")
    return path


def gen_navigation(seed: int, max_attempts: int = 50) -> NavigationTask:
    """Scatter the eight obstacles, retrying until a clear path exists."""
    rng = np.random.default_rng(seed)
    half_w = CORRIDOR_WIDTH / 2
    for _ in range(max_attempts):
        placed: list[tuple[float, float]] = []
        attempts = 0
        while len(placed) < len(OBSTACLE_LABELS) and attempts < 2000:
            attempts += 1
            x = rng.uniform(-(half_w - WALL_CLEARANCE), half_w - WALL_CLEARANCE)
            z = rng.uniform(2.0, CORRIDOR_LENGTH - 2.0)
            if any(math.hypot(x - px, z - pz) < OBSTACLE_SEPARATION
                   for px, pz in placed):
                continue
            placed.append((x, z))
        if len(placed) < len(OBSTACLE_LABELS):
            continue
        obstacles = tuple(
            Obstacle(
                index=i,
                label=label,
                center=Vec3(x, 0.0, z),
                radius=OBSTACLE_RADIUS,
                front_marker_id=100 + 2 * i,
                back_marker_id=101 + 2 * i,
            )
            for i, (label, (x, z)) in enumerate(zip(OBSTACLE_LABELS, placed))
        )
        if _grid_path(obstacles) is not None:
            return NavigationTask(obstacles=obstacles, seed=seed)
    raise GenerationError(f"could not generate a passable layout for seed {seed}")


# -- session logs -----------------------------------------------------------------


@dataclass(frozen=True)
class SessionEvent:
    t: float
    kind: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class SessionHeader:
    participant_id: str
    mode: str
    task: str
    seed: int
    group: str | None = None
    session_number: int = 1
    course: int | None = None
    tick_hz: float = 30.0
    complete: bool = True

    def __post_init__(self):
        if self.group is not None and self.group not in ("Group2D3D", "Group3D2D"):
            raise ValueError(f"unknown group {self.group!r}")
        if self.session_number not in (1, 2):
            raise ValueError("session_number must be 1 or 2")
        Mode.parse(self.mode)
        profile_for_task(self.task)


@dataclass(frozen=True)
class SessionLog:
    header: SessionHeader
    events: tuple[SessionEvent, ...]
    free_text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        last = -math.inf
        for e in self.events:
            if e.t < last:
                raise ValueError("event timestamps must be non-decreasing")
            last = e.t
        if self.header.complete:
            starts = sum(1 for e in self.events if e.kind == "task_start")
            ends = sum(1 for e in self.events if e.kind == "task_end")
            if starts != 1 or ends != 1:
                raise IncompleteLogError(
                    f"complete log needs exactly one task_start/task_end "
                    f"(got {starts}/{ends})"
                )

    def events_of(self, kind: str):
        return [e for e in self.events if e.kind == kind]

    def to_jsonl(self) -> str:
        header = {
            "schema": LOG_SCHEMA,
            "participant_id": self.header.participant_id,
            "group": self.header.group,
            "session_number": self.header.session_number,
            "mode": self.header.mode,
            "task": self.header.task,
            "seed": self.header.seed,
            "course": self.header.course,
            "tick_hz": self.header.tick_hz,
            "complete": self.header.complete,
        }
        if self.free_text is not None:
            header["free_text"] = self.free_text
        lines = [json.dumps(header, sort_keys=True)]
        for e in self.events:
            record = {"t": e.t, "kind": e.kind}
            if e.payload:
                record["payload"] = e.payload
            lines.append(json.dumps(record, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty log")
        header_doc = json.loads(lines[0])
        if header_doc.get("schema") != LOG_SCHEMA:
            raise ValueError(f"unsupported log schema {header_doc.get('schema')!r}")
        header = SessionHeader(
            participant_id=str(header_doc["participant_id"]),
            group=header_doc.get("group"),
            session_number=int(header_doc.get("session_number", 1)),
            mode=str(header_doc["mode"]),
            task=str(header_doc["task"]),
            seed=int(header_doc["seed"]),
            course=header_doc.get("course"),
            tick_hz=float(header_doc.get("tick_hz", 30.0)),
            complete=bool(header_doc.get("complete", True)),
        )
        events = []
        for ln in lines[1:]:
            doc = json.loads(ln)
            events.append(SessionEvent(float(doc["t"]), str(doc["kind"]),
                                       doc.get("payload", {})))
        return cls(header, tuple(events), header_doc.get("free_text"))


# -- scoring ------------------------------------------------------------------------


@dataclass(frozen=True)
class PointingNoise:
    """Angular perturbation of a pointing ray cast from `origin`."""

    origin: Vec3
    sigma_deg: float = 3.0


def _perturbed_plane_hit(origin: Vec3, aim: Vec3, sigma_deg: float,
                         plane_y: float, rng: np.random.Generator):
    direction = (aim - origin).normalized()
    for _ in range(100):
        delta = abs(rng.normal(0.0, math.radians(sigma_deg)))
        roll = rng.uniform(0.0, 2.0 * math.pi)
        helper = Vec3(0.0, 1.0, 0.0)
        if abs(direction.dot(helper)) > 0.99:
            helper = Vec3(1.0, 0.0, 0.0)
        e1 = direction.cross(helper).normalized()
        e2 = direction.cross(e1)
        tilted = (direction.scale(math.cos(delta))
                  + (e1.scale(math.cos(roll)) + e2.scale(math.sin(roll))).scale(math.sin(delta)))
        if abs(tilted.y) < 1e-9:
            continue
        t = (plane_y - origin.y) / tilted.y
        if t > 0.0:
            return origin + tilted.scale(t)
    raise RuntimeError("perturbed ray kept missing the table plane")


def score_pointing(task: LocalizationTask, object_id, submitted_point,
                   noise: PointingNoise | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Pointing error distance in meters on the table plane.

    Without noise this is the plain Euclidean distance between the submitted
    (x, z) point and the object center. With a noise model the ray from the
    noise origin through the submitted point gets a Gaussian angular
    perturbation and is re-intersected with the table plane first, so the
    expected error grows with the origin's distance from the target.
    """
    marker = task.marker_by_object(object_id)
    x, z = float(submitted_point[0]), float(submitted_point[1])
    if noise is not None:
        if rng is None:
            raise ValueError("a random generator is required with a noise model")
        hit = _perturbed_plane_hit(noise.origin, Vec3(x, task.table_height, z),
                                   noise.sigma_deg, task.table_height, rng)
        x, z = hit.x, hit.z
    return math.hypot(x - marker.center.x, z - marker.center.z)


@dataclass(frozen=True)
class LocalizationResult:
    per_object: dict
    total_time: float

    @property
    def mean_error(self) -> float:
        errs = [v["error_distance"] for v in self.per_object.values()]
        return sum(errs) / len(errs) if errs else math.nan


def score_localization(log: SessionLog, task: LocalizationTask) -> LocalizationResult:
    """Score each point_submit against its object, in submission order.

    Submissions may carry an object_id; otherwise the nearest not-yet-scored
    object is assumed (the assistant's judgment in the original protocol).
    """
    starts = log.events_of("task_start")
    ends = log.events_of("task_end")
    if not starts or not ends:
        raise IncompleteLogError("localization log is missing start/end")
    t_start, t_end = starts[0].t, ends[-1].t
    remaining = {m.id: m for m in task.markers}
    per_object = {}
    t_prev = t_start
    for e in log.events_of("point_submit"):
        if not remaining:
            break
        point = (float(e.payload["x"]), float(e.payload["z"]))
        oid = e.payload.get("object_id")
        if oid is None or oid not in remaining:
            oid = min(
                remaining,
                key=lambda mid: math.hypot(point[0] - remaining[mid].center.x,
                                           point[1] - remaining[mid].center.z),
            )
        marker = remaining.pop(oid)
        per_object[marker.object_label] = {
            "time_to_find": e.t - t_prev,
            "error_distance": score_pointing(task, marker.id, point),
        }
        t_prev = e.t
    return LocalizationResult(per_object=per_object, total_time=t_end - t_start)


# -- navigation judging ---------------------------------------------------------------


@dataclass(frozen=True)
class NavigationResult:
    course_time: float
    verdicts: dict  # obstacle index -> "seen" | "missed"
    missed_count: int


def _track_breach_time(track, center: Vec3, radius: float):
    """Earliest time the polyline track enters the radius, or None.

    Distances are taken along segments so the verdict does not depend on the
    pose sampling rate.
    """
    cx, cz = center.x, center.z
    for (t0, x0, z0), (t1, x1, z1) in zip(track, track[1:]):
        dx, dz = x1 - x0, z1 - z0
        fx, fz = x0 - cx, z0 - cz
        a = dx * dx + dz * dz
        b = 2.0 * (fx * dx + fz * dz)
        c = fx * fx + fz * fz - radius * radius
        if c <= 0.0:
            return t0
        if a == 0.0:
            continue
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            continue
        s = (-b - math.sqrt(disc)) / (2.0 * a)
        if 0.0 <= s <= 1.0:
            return t0 + s * (t1 - t0)
    if track:
        t, x, z = track[-1]
        if math.hypot(x - cx, z - cz) <= radius:
            return t
    return None


def _pose_at(track, t: float):
    """Position at time t from the latest pose sample not after t."""
    best = None
    for sample in track:
        if sample[0] <= t:
            best = sample
        else:
            break
    return best


def judge_obstacles(log: SessionLog, task: NavigationTask,
                    collision_radius: float = COLLISION_RADIUS,
                    report_tolerance: float = REPORT_TOLERANCE,
                    report_min_distance: float = REPORT_MIN_DISTANCE) -> NavigationResult:
    """Classify each obstacle as seen or missed.

    An obstacle counts as seen when it was reported within report_tolerance
    of its true position while the walker was at least report_min_distance
    away, before ever breaching the collision radius. Coming within the
    collision radius without such a report, or an explicit collision event,
    makes it missed.
    """
    starts = log.events_of("task_start")
    ends = log.events_of("task_end")
    if not starts or not ends:
        raise IncompleteLogError("navigation log is missing start/end")
    t_start, t_end = starts[0].t, ends[-1].t

    track = [
        (e.t, float(e.payload["position"][0]), float(e.payload["position"][2]))
        for e in log.events_of("pose")
        if t_start <= e.t <= t_end
    ]
    reports = [
        (e.t, float(e.payload["position"][0]), float(e.payload["position"][1]))
        for e in log.events_of("obstacle_report")
    ]
    collision_indices = {
        e.payload.get("obstacle") for e in log.events_of("collision")
    }

    verdicts = {}
    for ob in task.obstacles:
        breach_t = _track_breach_time(track, ob.center, collision_radius)
        seen = False
        for (tr, rx, rz) in reports:
            if math.hypot(rx - ob.center.x, rz - ob.center.z) > report_tolerance:
                continue
            here = _pose_at(track, tr)
            if here is None:
                continue
            if math.hypot(here[1] - ob.center.x, here[2] - ob.center.z) < report_min_distance:
                continue
            if breach_t is not None and tr > breach_t:
                continue
            seen = True
            break
        missed = (ob.index in collision_indices) or (breach_t is not None and not seen)
        verdicts[ob.index] = "missed" if missed else "seen"

    missed_count = sum(1 for v in verdicts.values() if v == "missed")
    return NavigationResult(course_time=t_end - t_start, verdicts=verdicts,
                            missed_count=missed_count)
