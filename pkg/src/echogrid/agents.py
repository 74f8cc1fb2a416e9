"""Scripted agents and the closed-loop simulation harness.

Agents receive exactly what a human operator would perceive, in symbolic
form: the active cell set (row, column, marker id, and the loop period the
sound would convey) plus proprioception (their own pose). They emit small
pose deltas, obstacle reports, and pointing submissions. The harness ticks
detection -> activation -> agent at a fixed rate and records a session log.

Three strategies are provided:

  oracle        reads the scene directly; perfect-information upper bound.
  sweep         localization: hover-scan the whole table, then home in on
                each object until it sits in the center cell at low height
                and point straight down.
  updown        navigation: walk, and range obstacles by tilting the camera
                until the sound jumps rows, converting the tilt angle at the
                row boundary into a distance (ignores the loop period, so
                its behavior is identical in 2D and 3D modes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .encoder import ActiveCellSet, update_activations
from .scene import CameraPose, Vec3, detect_markers
from .tasks import (
    EngineConfig,
    LocalizationTask,
    NavigationTask,
    SessionEvent,
    SessionHeader,
    SessionLog,
    OBSTACLE_MARKER_HEIGHT,
    _track_breach_time,
    find_corridor_path,
)

__all__ = ["AgentAction", "run_scripted", "make_agent", "AGENT_NAMES"]

MAX_SPEED = 1.5          # m/s
MAX_TURN = 120.0         # deg/s
CAMERA_HEIGHT = 1.4      # navigation camera height


@dataclass
class AgentAction:
    move: tuple[float, float, float] = (0.0, 0.0, 0.0)
    turn: float = 0.0   # yaw delta, degrees
    tilt: float = 0.0   # pitch delta, degrees
    reports: list = field(default_factory=list)   # [(x, z)]
    submits: list = field(default_factory=list)   # [{"x":, "z":, "object_id":}]
    done: bool = False


def _clamped_pose(pose: CameraPose, action: AgentAction, dt: float) -> CameraPose:
    max_step = MAX_SPEED * dt
    dx, dy, dz = action.move
    step = math.sqrt(dx * dx + dy * dy + dz * dz)
    if step > max_step and step > 0.0:
        k = max_step / step
        dx, dy, dz = dx * k, dy * k, dz * k
    max_turn = MAX_TURN * dt
    turn = max(-max_turn, min(max_turn, action.turn))
    tilt = max(-max_turn, min(max_turn, action.tilt))
    return CameraPose(
        pose.position + Vec3(dx, dy, dz),
        pose.yaw + turn,
        max(-90.0, min(90.0, pose.pitch + tilt)),
    )


# -- oracle -----------------------------------------------------------------------


class OracleAgent:
    """Reads the task layout directly; never misses, points exactly."""

    def __init__(self, task, config: EngineConfig):
        self.task = task
        self.config = config
        if isinstance(task, NavigationTask):
            self.waypoints = find_corridor_path(task)
            self.reported: set[int] = set()
        else:
            self.submitted = 0
            self.next_submit_t = 1.0

    def step(self, t: float, active: ActiveCellSet, pose: CameraPose) -> AgentAction:
        if isinstance(self.task, LocalizationTask):
            return self._step_localization(t)
        return self._step_navigation(pose)

    def _step_localization(self, t: float) -> AgentAction:
        action = AgentAction()
        if self.submitted < len(self.task.markers) and t >= self.next_submit_t:
            marker = self.task.markers[self.submitted]
            action.submits.append(
                {"x": marker.center.x, "z": marker.center.z, "object_id": marker.id}
            )
            self.submitted += 1
            self.next_submit_t = t + 1.0
        if self.submitted == len(self.task.markers):
            action.done = True
        return action

    def _step_navigation(self, pose: CameraPose) -> AgentAction:
        action = AgentAction()
        px, pz = pose.position.x, pose.position.z
        for ob in self.task.obstacles:
            if ob.index in self.reported:
                continue
            dist = math.hypot(ob.center.x - px, ob.center.z - pz)
            if 0.6 <= dist <= 7.0:
                action.reports.append((ob.center.x, ob.center.z))
                self.reported.add(ob.index)
        while self.waypoints and math.hypot(self.waypoints[0][0] - px,
                                            self.waypoints[0][1] - pz) < 0.15:
            self.waypoints.pop(0)
        if not self.waypoints:
            action.done = True
            return action
        wx, wz = self.waypoints[0]
        dx, dz = wx - px, wz - pz
        norm = math.hypot(dx, dz)
        speed = 1.2 / 30.0
        action.move = (dx / norm * speed, 0.0, dz / norm * speed)
        return action


# -- sweep (localization) ------------------------------------------------------------


class SweepAgent:
    """Scan the table from above, then center each object and point down.

    Uses only the active cell set and its own pose: object positions are
    estimated from the cell center ray cast from the current camera height.
    """

    SCAN_HEIGHT = 0.8    # camera height above the table while scanning
    POINT_HEIGHT = 0.3   # descend to this height before pointing
    SPEED = 0.045        # m per tick

    def __init__(self, task: LocalizationTask, config: EngineConfig):
        self.task_height = task.table_height
        self.n_objects = len(task.markers)
        self.h_fov = config.intrinsics.h_fov
        self.v_fov = config.intrinsics.v_fov
        self.grid_rows = config.grid.rows
        self.grid_cols = config.grid.cols
        self.scan_points = [(-0.35, 0.25), (0.35, 0.25), (0.35, 0.55), (-0.35, 0.55)]
        self.scan_index = 0
        self.estimates: dict[int, tuple[float, float]] = {}
        self.claimed: set[int] = set()
        self.target: int | None = None
        self.phase = "scan"

    def _cell_offset(self, row: int, col: int, height: float) -> tuple[float, float]:
        """Ground offset of a cell's center ray when looking straight down."""
        u = (col + 0.5) / self.grid_cols
        v = (row + 0.5) / self.grid_rows
        tan_x = (2.0 * u - 1.0) * math.tan(math.radians(self.h_fov) / 2.0)
        tan_y = (2.0 * v - 1.0) * math.tan(math.radians(self.v_fov) / 2.0)
        # Looking straight down with yaw 0: image right is +x, image down is -z.
        return tan_x * height, -tan_y * height

    def _note_estimates(self, active: ActiveCellSet, pose: CameraPose) -> None:
        height = pose.position.y - self.task_height
        for act in active.activations:
            off_x, off_z = self._cell_offset(act.cell.row, act.cell.col, height)
            self.estimates[act.marker_id] = (pose.position.x + off_x,
                                             pose.position.z + off_z)

    def _goto(self, pose: CameraPose, x: float, y: float, z: float) -> tuple:
        dx, dy, dz = x - pose.position.x, y - pose.position.y, z - pose.position.z
        n = math.sqrt(dx * dx + dy * dy + dz * dz)
        if n <= self.SPEED:
            return (dx, dy, dz)
        k = self.SPEED / n
        return (dx * k, dy * k, dz * k)

    def step(self, t: float, active: ActiveCellSet, pose: CameraPose) -> AgentAction:
        action = AgentAction()
        self._note_estimates(active, pose)

        if self.phase == "scan":
            if self.scan_index >= len(self.scan_points):
                self.phase = "pick"
            else:
                sx, sz = self.scan_points[self.scan_index]
                target_y = self.task_height + self.SCAN_HEIGHT
                if (abs(pose.position.x - sx) < 0.02
                        and abs(pose.position.z - sz) < 0.02
                        and abs(pose.position.y - target_y) < 0.02):
                    self.scan_index += 1
                else:
                    action.move = self._goto(pose, sx, target_y, sz)
                return action

        if self.phase == "pick":
            pending = [mid for mid in self.estimates if mid not in self.claimed]
            if not pending:
                if len(self.claimed) >= self.n_objects:
                    action.done = True
                else:
                    self.scan_index = 0  # rescan for anything not yet heard
                    self.phase = "scan"
                return action
            self.target = min(pending)
            self.phase = "home"

        if self.phase == "home":
            visible = {a.marker_id: a for a in active.activations}
            target_act = visible.get(self.target)
            height = pose.position.y - self.task_height
            if target_act is None:
                ex, ez = self.estimates[self.target]
                action.move = self._goto(pose, ex, self.task_height + self.SCAN_HEIGHT, ez)
                return action
            row, col = target_act.cell.row, target_act.cell.col
            center_row = (self.grid_rows - 1) // 2
            center_col = (self.grid_cols - 1) // 2
            if row == center_row and col == center_col:
                if height <= self.POINT_HEIGHT + 0.01:
                    action.submits.append({
                        "x": pose.position.x,
                        "z": pose.position.z,
                        "object_id": self.target,
                    })
                    self.claimed.add(self.target)
                    self.target = None
                    self.phase = "pick"
                    return action
                action.move = self._goto(pose, pose.position.x,
                                         pose.position.y - self.SPEED,
                                         pose.position.z)
                return action
            # Re-center: one cell of error corresponds to a ground offset
            # proportional to the current height.
            step_x = 0.30 * height * (col - center_col)
            step_z = -0.30 * height * (row - center_row)
            action.move = self._goto(pose, pose.position.x + step_x,
                                     pose.position.y, pose.position.z + step_z)
            return action

        return action


# -- up/down ranger (navigation) ------------------------------------------------------


class UpDownRangerAgent:
    """Walk the corridor, ranging obstacles by tilt sweeps.

    Distance comes from the pitch angle at which a sounding cell crosses a
    row boundary (the marker height above the floor is known device lore).
    The loop period is never consulted, so runs are identical across modes.
    """

    CRUISE_PITCH = -12.0
    WALK_SPEED = 0.9 / 30.0
    SWEEP_STEP = 1.2          # degrees of tilt per tick while ranging
    RANGE_TRIGGER = 2.6       # coarse distance (m) that interrupts walking
    DODGE_OFFSET = 1.1
    WALL_LIMIT = 2.4

    def __init__(self, task: NavigationTask, config: EngineConfig):
        self.finish_z = task.finish_z
        self.v_fov = config.intrinsics.v_fov
        self.h_fov = config.intrinsics.h_fov
        self.rows = config.grid.rows
        self.cols = config.grid.cols
        self.handled: set[int] = set()
        self.phase = "walk"
        self.target: int | None = None
        self.prev_rows: dict[int, int] = {}
        self.waypoints: list[tuple[float, float]] = []
        self.drop_height = CAMERA_HEIGHT - OBSTACLE_MARKER_HEIGHT

    # angle of a row boundary relative to the optical axis (degrees,
    # positive below the axis)
    def _boundary_axis_angle(self, v: float) -> float:
        return math.degrees(math.atan((2.0 * v - 1.0)
                                       * math.tan(math.radians(self.v_fov) / 2.0)))

    def _row_center_range(self, row: int, pitch: float) -> float:
        v = (row + 0.5) / self.rows
        below_horizon = self._boundary_axis_angle(v) - pitch
        if below_horizon <= 1.0:
            return math.inf
        return self.drop_height / math.tan(math.radians(below_horizon))

    def _col_bearing(self, col: int) -> float:
        u = (col + 0.5) / self.cols
        return math.degrees(math.atan((2.0 * u - 1.0)
                                      * math.tan(math.radians(self.h_fov) / 2.0)))

    def step(self, t: float, active: ActiveCellSet, pose: CameraPose) -> AgentAction:
        action = AgentAction()
        cells = {a.marker_id: a for a in active.activations}
        px, pz = pose.position.x, pose.position.z

        if pz >= self.finish_z:
            action.done = True
            return action

        if self.phase == "walk":
            threat = None
            threat_range = math.inf
            for mid, act in cells.items():
                if mid in self.handled:
                    continue
                rng = self._row_center_range(act.cell.row, pose.pitch)
                if rng < threat_range:
                    threat, threat_range = mid, rng
            if threat is not None and threat_range <= self.RANGE_TRIGGER:
                self.phase = "range"
                self.target = threat
                self.prev_rows.pop(threat, None)
                return action
            # level back to cruise tilt, then walk toward the next waypoint
            if abs(pose.pitch - self.CRUISE_PITCH) > 0.6:
                action.tilt = self.CRUISE_PITCH - pose.pitch
                return action
            while self.waypoints and math.hypot(self.waypoints[0][0] - px,
                                                self.waypoints[0][1] - pz) < 0.12:
                self.waypoints.pop(0)
            if self.waypoints:
                wx, wz = self.waypoints[0]
            else:
                wx, wz = px, self.finish_z + 1.0
            # keep the camera square down the corridor; steer by sidestepping
            if abs(pose.yaw) > 0.5:
                action.turn = -pose.yaw
            dx, dz = wx - px, wz - pz
            n = math.hypot(dx, dz)
            action.move = (dx / n * self.WALK_SPEED, 0.0, dz / n * self.WALK_SPEED)
            return action

        if self.phase == "range":
            act = cells.get(self.target)
            if act is None:
                # swept past the frame without a crossing: fall back to the
                # last coarse estimate at the top boundary
                self._report_from_boundary(action, pose, 1.0 / self.rows, 2)
                return action
            prev_row = self.prev_rows.get(self.target)
            self.prev_rows[self.target] = act.cell.row
            if act.cell.col != (self.cols - 1) // 2:
                action.turn = 2.5 * (act.cell.col - (self.cols - 1) // 2)
            if prev_row == 1 and act.cell.row == 0:
                self._report_from_boundary(action, pose, 1.0 / self.rows, act.cell.col)
                return action
            action.tilt = -self.SWEEP_STEP
            return action

        if self.phase == "avoid":
            threat = None
            threat_range = math.inf
            for mid, a in cells.items():
                if mid in self.handled:
                    continue
                rng = self._row_center_range(a.cell.row, pose.pitch)
                if rng < threat_range:
                    threat, threat_range = mid, rng
            if threat is not None and threat_range <= 1.6:
                self.phase = "range"
                self.target = threat
                self.prev_rows.pop(threat, None)
                return action
            while self.waypoints and math.hypot(self.waypoints[0][0] - px,
                                                self.waypoints[0][1] - pz) < 0.12:
                self.waypoints.pop(0)
            if not self.waypoints:
                self.phase = "walk"
                return action
            if abs(pose.pitch - self.CRUISE_PITCH) > 0.6:
                action.tilt = self.CRUISE_PITCH - pose.pitch
            wx, wz = self.waypoints[0]
            dx, dz = wx - px, wz - pz
            n = math.hypot(dx, dz)
            action.move = (dx / n * self.WALK_SPEED, 0.0, dz / n * self.WALK_SPEED)
            return action

        return action

    def _report_from_boundary(self, action: AgentAction, pose: CameraPose,
                              v_boundary: float, col: int) -> None:
        """Convert a row-boundary crossing into a report and a dodge plan."""
        # Boundary crossed somewhere within the last sweep step.
        axis_angle = self._boundary_axis_angle(v_boundary)
        below_horizon = axis_angle - (pose.pitch + self.SWEEP_STEP / 2.0)
        below_horizon = max(below_horizon, 2.0)
        ground_range = self.drop_height / math.tan(math.radians(below_horizon))
        bearing = math.radians(pose.yaw + self._col_bearing(col))
        # Aim past the tagged face toward the obstacle's body.
        est_x = pose.position.x + (ground_range + 0.25) * math.sin(bearing)
        est_z = pose.position.z + (ground_range + 0.25) * math.cos(bearing)
        action.reports.append((est_x, est_z))
        self.handled.add(self.target)
        # The twin marker on the far face of the same object sits within a
        # body diameter; treat anything that close as handled too.
        self.target = None
        self.phase = "avoid"
        dodge = -1.0 if est_x > pose.position.x else 1.0
        if abs(est_x - pose.position.x) < 0.05:
            dodge = 1.0 if est_x <= 0.0 else -1.0
        dodge_x = est_x + dodge * self.DODGE_OFFSET
        if abs(dodge_x) > self.WALL_LIMIT:
            dodge_x = est_x - dodge * self.DODGE_OFFSET
        dodge_x = max(-self.WALL_LIMIT, min(self.WALL_LIMIT, dodge_x))
        self.waypoints = [(dodge_x, max(est_z - 0.4, pose.position.z)),
                          (dodge_x, est_z + 0.9)]


AGENT_NAMES = {
    "oracle": OracleAgent,
    "sweep": SweepAgent,
    "updown": UpDownRangerAgent,
    "updownranger": UpDownRangerAgent,
}


def make_agent(name: str, task, config: EngineConfig):
    key = str(name).strip().lower().replace("-", "").replace("_", "")
    if key not in AGENT_NAMES:
        raise ValueError(f"unknown agent {name!r} (choose from oracle, sweep, updown)")
    cls = AGENT_NAMES[key]
    if cls is SweepAgent and not isinstance(task, LocalizationTask):
        raise ValueError("sweep agent only runs localization tasks")
    if cls is UpDownRangerAgent and not isinstance(task, NavigationTask):
        raise ValueError("updown agent only runs navigation tasks")
    return cls(task, config)


def _initial_pose(task) -> CameraPose:
    if isinstance(task, LocalizationTask):
        return CameraPose(Vec3(0.0, task.table_height + 0.8, 0.25), 0.0, -90.0)
    return CameraPose(Vec3(0.0, CAMERA_HEIGHT, task.start_z), 0.0,
                      UpDownRangerAgent.CRUISE_PITCH)


def run_scripted(agent, task, engine_config: EngineConfig, seed: int,
                 participant_id: str = "agent", group: str | None = None,
                 session_number: int = 1, course: int | None = None) -> SessionLog:
    """Run a scripted agent against a task at a fixed tick rate.

    Everything is deterministic: the task layout comes from its seed and the
    agents use no entropy. Exceeding the configured duration budget aborts
    with a partial (complete=False) log.
    """
    if isinstance(agent, str):
        agent = make_agent(agent, task, engine_config)
    scene = task.scene()
    is_nav = isinstance(task, NavigationTask)
    dt = 1.0 / engine_config.tick_hz
    max_ticks = int(engine_config.max_duration_s * engine_config.tick_hz)

    pose = _initial_pose(task)
    active = ActiveCellSet((), engine_config.mode, 0.0)
    events: list[SessionEvent] = [
        SessionEvent(0.0, "task_start", {"task": task.kind, "seed": task.seed}),
        SessionEvent(0.0, "mode_set", {"mode": engine_config.mode.value}),
    ]
    collided: set[int] = set()
    submits = 0
    finished = False

    for i in range(max_ticks):
        t = i * dt
        detections = detect_markers(scene, pose, engine_config.intrinsics,
                                    engine_config.profile,
                                    occlusion=engine_config.occlusion)
        active = update_activations(active, detections, engine_config.grid,
                                    engine_config.mode, t, engine_config.profile)
        events.append(SessionEvent(t, "pose", {
            "position": pose.position.as_list(),
            "yaw": pose.yaw,
            "pitch": pose.pitch,
        }))
        action = agent.step(t, active, pose)
        for (rx, rz) in action.reports:
            events.append(SessionEvent(t, "obstacle_report", {"position": [rx, rz]}))
        for sub in action.submits:
            events.append(SessionEvent(t, "point_submit", dict(sub)))
            submits += 1

        old = pose
        pose = _clamped_pose(pose, action, dt)
        if is_nav:
            for ob in task.obstacles:
                if ob.index in collided:
                    continue
                seg = [(t, old.position.x, old.position.z),
                       (t + dt, pose.position.x, pose.position.z)]
                if _track_breach_time(seg, ob.center, ob.radius) is not None:
                    collided.add(ob.index)
                    events.append(SessionEvent(t, "collision", {"obstacle": ob.index}))

        if action.done or (is_nav and pose.position.z >= task.finish_z) \
                or (not is_nav and submits >= len(task.markers)):
            events.append(SessionEvent(t + dt, "pose", {
                "position": pose.position.as_list(),
                "yaw": pose.yaw,
                "pitch": pose.pitch,
            }))
            events.append(SessionEvent(t + dt, "task_end", {}))
            finished = True
            break

    header = SessionHeader(
        participant_id=participant_id,
        group=group,
        session_number=session_number,
        mode=engine_config.mode.value,
        task=task.kind,
        seed=seed,
        course=course,
        tick_hz=engine_config.tick_hz,
        complete=finished,
    )
    return SessionLog(header, tuple(events))
