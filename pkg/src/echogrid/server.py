"""Live session orchestration: protocol state machine and WebSocket transport.

The protocol (`echogrid/1`) carries JSON text frames over a single
full-duplex connection. The state machine is pure: `handle_message` and
`tick` map (state, input) to (state', outgoing messages) without side
effects, so the protocol can be tested and replayed without a network.
Event timestamps always come from the client's message stream, never from
the wall clock, which makes a recorded stream replay to an identical log.

A session walks the crossover protocol: two sessions of one localization
task plus three navigation courses each, one mode per session, mode order
fixed by the group. Rejected messages produce an `error` frame and leave
the state untouched.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from functools import lru_cache

from .audio import Mixer, frames_to_pcm16
from .encoder import (
    ActiveCellSet,
    CellGrid,
    DEFAULT_GRID,
    Mode,
    NOTE_FREQUENCIES,
    cell_note,
    update_activations,
)
from .scene import CameraIntrinsics, CameraPose, Vec3, detect_markers, scene_to_config
from .tasks import (
    EngineConfig,
    SessionEvent,
    SessionHeader,
    SessionLog,
    gen_localization,
    gen_navigation,
    judge_obstacles,
    profile_for_task,
    score_localization,
)

__all__ = [
    "PROTOCOL_VERSION",
    "ServerConfig",
    "Slot",
    "SessionState",
    "make_session",
    "handle_message",
    "tick",
    "persist",
    "replay_messages",
    "serve",
]

PROTOCOL_VERSION = "echogrid/1"
MAX_MESSAGE_RATE_HZ = 60.0

E_VERSION = "E_VERSION"
E_PHASE = "E_PHASE"
E_MSG = "E_MSG"
E_TIME = "E_TIME"

GROUP_MODE_ORDER = {
    "Group2D3D": ("2d", "3d"),
    "Group3D2D": ("3d", "2d"),
    None: ("2d", "3d"),
}


@dataclass(frozen=True)
class Slot:
    session_number: int
    task_kind: str  # "localization" | "navigation"
    course: int | None
    mode: str


def build_schedule(group: str | None, courses: int = 3) -> tuple[Slot, ...]:
    """Two sessions; each is one localization task then `courses` navigation
    courses, with the session's mode fixed by the group's order."""
    order = GROUP_MODE_ORDER[group]
    slots: list[Slot] = []
    for session, mode in zip((1, 2), order):
        slots.append(Slot(session, "localization", None, mode))
        for course in range(1, courses + 1):
            slots.append(Slot(session, "navigation", course, mode))
    return tuple(slots)


@dataclass(frozen=True)
class ServerConfig:
    seed: int = 0
    participant_id: str = "anon"
    group: str | None = None
    courses: int = 3
    tick_hz: float = 30.0
    grid: CellGrid = DEFAULT_GRID
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    enforce_mode_order: bool = True


def slot_seed(config: ServerConfig, slot: Slot) -> int:
    """Task seeds are paired across sessions: only the mode differs."""
    if slot.task_kind == "localization":
        return config.seed
    return config.seed + slot.course


@lru_cache(maxsize=64)
def _cached_task(task_kind: str, seed: int):
    if task_kind == "localization":
        return gen_localization(seed)
    return gen_navigation(seed)


def _task_for_slot(config: ServerConfig, slot: Slot):
    return _cached_task(slot.task_kind, slot_seed(config, slot))


@dataclass(frozen=True)
class SessionState:
    config: ServerConfig
    schedule: tuple[Slot, ...]
    session_id: str = ""
    phase: str = "hello"  # hello -> ready -> running -> ... -> done
    slot_index: int = 0
    mode: str = "2d"
    pose: CameraPose | None = None
    last_pose_t: float = -math.inf
    last_event_t: float = -math.inf
    task: object = None
    scene: object = None
    active: ActiveCellSet = field(default_factory=ActiveCellSet)
    events: tuple[SessionEvent, ...] = ()
    logs: tuple[SessionLog, ...] = ()
    last_emit_t: float = -math.inf
    emitted_cells: tuple | None = None
    pcm_stream: bool = False

    @property
    def current_slot(self) -> Slot | None:
        if self.slot_index < len(self.schedule):
            return self.schedule[self.slot_index]
        return None


def make_session(config: ServerConfig) -> SessionState:
    schedule = build_schedule(config.group, config.courses)
    session_id = f"{config.participant_id}-{config.group or 'free'}-{config.seed}"
    return SessionState(config=config, schedule=schedule, session_id=session_id,
                        mode=schedule[0].mode)


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


def _engine_config(state: SessionState) -> EngineConfig:
    slot = state.schedule[max(0, min(state.slot_index, len(state.schedule) - 1))]
    return EngineConfig(
        mode=Mode.parse(state.mode),
        grid=state.config.grid,
        intrinsics=state.config.intrinsics,
        profile=profile_for_task(slot.task_kind),
        tick_hz=state.config.tick_hz,
    )


def _cells_payload(active: ActiveCellSet, grid: CellGrid) -> list[dict]:
    out = []
    for act in active.activations:
        spec = cell_note(act.cell, grid)
        out.append({
            "row": act.cell.row,
            "col": act.cell.col,
            "note_hz": spec.frequency,
            "azimuth_deg": spec.azimuth,
            "period_s": act.period,
            "marker_id": act.marker_id,
            "distance_m": act.distance,
        })
    return out


def _task_state_msg(state: SessionState, extra_phase: str | None = None) -> dict:
    slot = state.current_slot
    msg = {
        "type": "task_state",
        "phase": extra_phase or state.phase,
        "mode": state.mode,
    }
    if slot is not None:
        msg.update({
            "session_number": slot.session_number,
            "task": slot.task_kind,
            "course": slot.course,
            "slot_index": state.slot_index,
            "slots_total": len(state.schedule),
        })
    if state.phase == "running" and state.scene is not None:
        msg["scene"] = json.loads(scene_to_config(state.scene))
        if slot.task_kind == "navigation":
            msg["start_z"] = state.task.start_z
            msg["finish_z"] = state.task.finish_z
        else:
            msg["table_height"] = state.task.table_height
    return msg


def _welcome_msg(state: SessionState) -> dict:
    grid = state.config.grid
    first_task = _task_for_slot(state.config, state.schedule[0])
    return {
        "type": "welcome",
        "protocol": PROTOCOL_VERSION,
        "session_id": state.session_id,
        "scene": json.loads(scene_to_config(first_task.scene())),
        "grid": {"rows": grid.rows, "cols": grid.cols},
        "azimuths": list(grid.azimuths),
        "notes": [
            {"row": row, "name": name, "frequency_hz": NOTE_FREQUENCIES[name]}
            for row, name in enumerate(("G3", "E3", "C3"))
        ],
        "schedule": [
            {"session_number": s.session_number, "task": s.task_kind,
             "course": s.course, "mode": s.mode}
            for s in state.schedule
        ],
    }


def _finish_slot(state: SessionState, t_end: float) -> tuple[SessionState, list[dict]]:
    """Close the running task: log it, judge it, advance the schedule."""
    slot = state.current_slot
    events = state.events + (SessionEvent(t_end, "task_end", {}),)
    header = SessionHeader(
        participant_id=state.config.participant_id,
        group=state.config.group,
        session_number=slot.session_number,
        mode=state.mode,
        task=slot.task_kind,
        seed=slot_seed(state.config, slot),
        course=slot.course,
        tick_hz=state.config.tick_hz,
        complete=True,
    )
    log = SessionLog(header, events)
    if slot.task_kind == "localization":
        result = score_localization(log, state.task)
        result_msg = {
            "type": "result",
            "task": "localization",
            "per_object": result.per_object,
            "total_time": result.total_time,
        }
    else:
        result = judge_obstacles(log, state.task)
        result_msg = {
            "type": "result",
            "task": "navigation",
            "course_time": result.course_time,
            "verdicts": {str(k): v for k, v in result.verdicts.items()},
            "missed_count": result.missed_count,
        }
    next_index = state.slot_index + 1
    done = next_index >= len(state.schedule)
    new_state = replace(
        state,
        phase="done" if done else "ready",
        slot_index=next_index,
        mode=state.mode if done else state.schedule[next_index].mode,
        task=None,
        scene=None,
        events=(),
        active=ActiveCellSet((), Mode.parse(state.mode), 0.0),
        logs=state.logs + (log,),
        emitted_cells=None,
        last_emit_t=-math.inf,
    )
    out = [result_msg, _task_state_msg(new_state)]
    return new_state, out


def _start_slot(state: SessionState, t: float) -> tuple[SessionState, list[dict]]:
    slot = state.current_slot
    task = _task_for_slot(state.config, slot)
    events = (
        SessionEvent(t, "task_start", {"task": slot.task_kind, "seed": task.seed}),
        SessionEvent(t, "mode_set", {"mode": state.mode}),
    )
    new_state = replace(
        state,
        phase="running",
        task=task,
        scene=task.scene(),
        events=events,
        active=ActiveCellSet((), Mode.parse(state.mode), t),
        last_event_t=t,
        emitted_cells=None,
        last_emit_t=-math.inf,
    )
    return new_state, [_task_state_msg(new_state)]


def _valid_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) \
        and math.isfinite(value)


def handle_message(state: SessionState, msg) -> tuple[SessionState, list[dict]]:
    """Pure protocol transition. Invalid input returns the state unchanged
    plus an error frame."""
    if not isinstance(msg, dict) or "type" not in msg:
        return state, [_error(E_MSG, "message must be an object with a 'type'")]
    mtype = msg["type"]

    if mtype == "hello":
        if state.phase != "hello":
            return state, [_error(E_PHASE, "handshake already completed")]
        if msg.get("protocol") != PROTOCOL_VERSION:
            return state, [_error(
                E_VERSION,
                f"unsupported protocol {msg.get('protocol')!r}, "
                f"server speaks {PROTOCOL_VERSION}",
            )]
        new_state = replace(state, phase="ready",
                            pcm_stream=bool(msg.get("pcm_stream", False)))
        return new_state, [_welcome_msg(new_state), _task_state_msg(new_state)]

    if state.phase == "hello":
        return state, [_error(E_PHASE, "say hello first")]

    if mtype == "pose":
        t = msg.get("t")
        position = msg.get("position")
        if not _valid_number(t) or not isinstance(position, list) or len(position) != 3 \
                or not all(_valid_number(c) for c in position) \
                or not _valid_number(msg.get("yaw")) or not _valid_number(msg.get("pitch")):
            return state, [_error(E_MSG, "pose needs numeric t, position[3], yaw, pitch")]
        if not -90.0 <= msg["pitch"] <= 90.0:
            return state, [_error(E_MSG, "pitch outside [-90, 90]")]
        if t < state.last_pose_t:
            return state, [_error(E_TIME, "pose timestamps must not go backwards")]
        pose = CameraPose(Vec3(*position), float(msg["yaw"]), float(msg["pitch"]))
        new_state = replace(state, pose=pose, last_pose_t=float(t))
        if state.phase == "running":
            if t < state.last_event_t:
                return state, [_error(E_TIME, "event timestamps must not go backwards")]
            event = SessionEvent(float(t), "pose", {
                "position": pose.position.as_list(),
                "yaw": pose.yaw,
                "pitch": pose.pitch,
            })
            new_state = replace(new_state, events=state.events + (event,),
                                last_event_t=float(t))
        return new_state, []

    if mtype == "set_mode":
        try:
            mode = Mode.parse(msg.get("mode", ""))
        except ValueError as exc:
            return state, [_error(E_MSG, str(exc))]
        if state.phase != "ready":
            return state, [_error(E_PHASE, "mode is fixed while a task is running")]
        slot = state.current_slot
        if state.config.enforce_mode_order and slot is not None \
                and mode.value != slot.mode:
            return state, [_error(
                E_PHASE,
                f"session {slot.session_number} uses mode {slot.mode} "
                f"for group {state.config.group}",
            )]
        return replace(state, mode=mode.value), [_task_state_msg(state)]

    if mtype == "task_control":
        action = msg.get("action")
        t = msg.get("t")
        if t is None:
            t = state.last_pose_t if math.isfinite(state.last_pose_t) else 0.0
        if not _valid_number(t):
            return state, [_error(E_MSG, "task_control t must be numeric")]
        t = float(t)
        if action == "start":
            if state.phase != "ready":
                return state, [_error(E_PHASE, f"cannot start from phase {state.phase}")]
            return _start_slot(state, t)
        if action == "end":
            if state.phase != "running":
                return state, [_error(E_PHASE, "no task is running")]
            if t < state.last_event_t:
                return state, [_error(E_TIME, "event timestamps must not go backwards")]
            return _finish_slot(state, t)
        if action == "next":
            if state.phase != "running":
                return state, [_error(E_PHASE, "no task is running")]
            if t < state.last_event_t:
                return state, [_error(E_TIME, "event timestamps must not go backwards")]
            new_state, out = _finish_slot(state, t)
            if new_state.phase == "ready":
                new_state, out2 = _start_slot(new_state, t)
                out.extend(out2)
            return new_state, out
        return state, [_error(E_MSG, f"unknown task_control action {action!r}")]

    if mtype == "point_submit":
        if state.phase != "running" or state.current_slot.task_kind != "localization":
            return state, [_error(E_PHASE, "point_submit only during a localization task")]
        if not _valid_number(msg.get("x")) or not _valid_number(msg.get("z")):
            return state, [_error(E_MSG, "point_submit needs numeric x, z")]
        t = msg.get("t", state.last_pose_t if math.isfinite(state.last_pose_t) else 0.0)
        if not _valid_number(t) or t < state.last_event_t:
            return state, [_error(E_TIME, "event timestamps must not go backwards")]
        payload = {"x": float(msg["x"]), "z": float(msg["z"])}
        if "object_id" in msg:
            payload["object_id"] = msg["object_id"]
        event = SessionEvent(float(t), "point_submit", payload)
        return replace(state, events=state.events + (event,),
                       last_event_t=float(t)), []

    if mtype == "obstacle_report":
        if state.phase != "running" or state.current_slot.task_kind != "navigation":
            return state, [_error(E_PHASE, "obstacle_report only during a navigation task")]
        position = msg.get("position")
        if not isinstance(position, list) or len(position) != 2 \
                or not all(_valid_number(c) for c in position):
            return state, [_error(E_MSG, "obstacle_report needs position [x, z]")]
        t = msg.get("t", state.last_pose_t if math.isfinite(state.last_pose_t) else 0.0)
        if not _valid_number(t) or t < state.last_event_t:
            return state, [_error(E_TIME, "event timestamps must not go backwards")]
        event = SessionEvent(float(t), "obstacle_report",
                             {"position": [float(position[0]), float(position[1])]})
        return replace(state, events=state.events + (event,),
                       last_event_t=float(t)), []

    return state, [_error(E_MSG, f"unknown message type {mtype!r}")]


def _boundary_crossed(prev: ActiveCellSet, cur: ActiveCellSet) -> bool:
    before = prev.by_key()
    for act in cur.activations:
        old = before.get(act.key)
        if old is not None and act.loop_phase < old.loop_phase:
            return True
    return False


def tick(state: SessionState, now: float) -> tuple[SessionState, list[dict]]:
    """Advance detection and activations to `now` (session-relative seconds).

    Emits an `active_cells` frame when the sounding set changed or a loop
    boundary passed, capped at 60 messages/s.
    """
    if state.phase != "running":
        return state, []
    if now < state.active.timestamp:
        return state, []
    engine = _engine_config(state)
    if state.pose is None:
        detections = []
    else:
        detections = detect_markers(state.scene, state.pose, engine.intrinsics,
                                    engine.profile)
    active = update_activations(state.active, detections, engine.grid,
                                engine.mode, now, engine.profile)
    cells = _cells_payload(active, engine.grid)
    signature = tuple(sorted((c["row"], c["col"], c["marker_id"], c["period_s"])
                             for c in cells))
    changed = state.emitted_cells is None or signature != state.emitted_cells
    boundary = _boundary_crossed(state.active, active)
    rate_ok = (now - state.last_emit_t) >= (1.0 / MAX_MESSAGE_RATE_HZ) - 1e-9
    new_state = replace(state, active=active)
    if (changed or boundary) and rate_ok:
        new_state = replace(new_state, emitted_cells=signature, last_emit_t=now)
        return new_state, [{"type": "active_cells", "t": now, "cells": cells}]
    return new_state, []


def persist(log: SessionLog, directory, tag: str = "") -> str:
    """Atomically write one session log as JSONL; returns the path."""
    os.makedirs(directory, exist_ok=True)
    h = log.header
    course = f"c{h.course}" if h.course is not None else "loc"
    stem = f"{tag + '-' if tag else ''}{h.participant_id}-s{h.session_number}-" \
           f"{h.task}-{course}-{h.mode}"
    path = os.path.join(directory, f"{stem}.jsonl")
    n = 1
    while os.path.exists(path):
        n += 1
        path = os.path.join(directory, f"{stem}-{n}.jsonl")
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(log.to_jsonl())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def replay_messages(config: ServerConfig, messages) -> tuple[SessionState, list[dict]]:
    """Feed a recorded client stream through a fresh state machine.

    Ticks run after every pose at the pose's own timestamp, exactly like the
    live server, so the resulting logs are identical to the original run.
    """
    state = make_session(config)
    sent: list[dict] = []
    for msg in messages:
        state, out = handle_message(state, msg)
        sent.extend(out)
        if isinstance(msg, dict) and msg.get("type") == "pose" \
                and not any(o.get("type") == "error" for o in out):
            state, out = tick(state, float(msg["t"]))
            sent.extend(out)
    return state, sent


# -- live transport -------------------------------------------------------------------


async def _client_session(websocket, config: ServerConfig, out_dir: str | None):
    state = make_session(config)
    mixer: Mixer | None = None
    pcm_cursor_t = 0.0

    async def send_all(messages):
        for m in messages:
            await websocket.send(json.dumps(m))

    try:
        async for raw in websocket:
            if isinstance(raw, bytes):
                await websocket.send(json.dumps(_error(E_MSG, "binary frames are server-to-client only")))
                continue
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError:
                await websocket.send(json.dumps(_error(E_MSG, "frame is not valid JSON")))
                continue
            state, out = handle_message(state, msg)
            await send_all(out)
            if msg.get("type") == "pose" and not any(o.get("type") == "error" for o in out):
                now = float(msg["t"])
                was_running = state.phase == "running"
                state, out = tick(state, now)
                await send_all(out)
                if state.pcm_stream and was_running:
                    if mixer is None:
                        mixer = Mixer(grid=config.grid)
                        pcm_cursor_t = now
                    mixer.set_active(state.active)
                    n = int(round((now - pcm_cursor_t) * mixer.sample_rate))
                    if n > 0:
                        block = mixer.render(min(n, mixer.sample_rate))
                        pcm_cursor_t = now
                        await websocket.send(frames_to_pcm16(block.frames).tobytes())
    finally:
        if out_dir:
            for log in state.logs:
                persist(log, out_dir, tag=state.session_id)


def serve(host: str = "127.0.0.1", port: int = 8765,
          config: ServerConfig | None = None, out_dir: str | None = None,
          banner: str | None = None):
    """Run the WebSocket server until cancelled (blocking).

    The banner, if any, is printed only after the socket is bound, so
    process supervisors can treat it as a readiness signal.
    """
    import asyncio

    import websockets

    base = config or ServerConfig()

    async def handler(websocket):
        await _client_session(websocket, base, out_dir)

    async def main():
        async with websockets.serve(handler, host, port):
            if banner:
                print(banner, flush=True)
            await asyncio.Future()

    asyncio.run(main())
