// Browser entry point: wires the WebSocket transport, pointer-lock camera,
// Web Audio voices, scene renderer, and the task HUD together.
//
// Controls:
//   click canvas   grab the mouse (aim with mouse, move with WASD, Q/E up/down)
//   Enter          start the next task / next course
//   Backspace      end the running task
//   Space          point at the crosshair's table intersection (localization)
//   R              aim-and-confirm an obstacle report (navigation)
//   B              blindfold toggle
//   M              toggle 2d/3d request (between tasks; ignored when the
//                  session's group fixes the order)

import { WebAudioBackend } from "./audio.js";
import { intersectPlaneY } from "./camera.js";
import { Hud } from "./hud.js";
import { PoseController, InputState } from "./pose.js";
import { SceneRenderer } from "./render.js";
import { Session } from "./session.js";
import { VoiceManager } from "./voices.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const hud = new Hud({
  status: document.getElementById("status")!,
  task: document.getElementById("task")!,
  result: document.getElementById("result")!,
  error: document.getElementById("error")!,
});
const audioButton = document.getElementById("enable-audio") as HTMLButtonElement;

const url =
  new URLSearchParams(location.search).get("server") ?? "ws://127.0.0.1:8765";

let audioCtx: AudioContext | null = null;
let voices: VoiceManager | null = null;
let blindfold = false;
let reportAim: { x: number; z: number } | null = null;

const pose = new PoseController({ x: 0, y: 1.4, z: 0.5, yaw: 0, pitch: -12 });
const renderer = new SceneRenderer(canvas.width, canvas.height);
const input: InputState = {
  forward: false,
  back: false,
  left: false,
  right: false,
  up: false,
  descend: false,
};

const session = new Session({
  onWelcome(msg) {
    hud.setStatus(`session ${msg.session_id} connected (${url})`);
  },
  onTaskState(msg) {
    hud.showTaskState(msg);
    if (msg.phase !== "running") voices?.stopAll();
  },
  onActiveCells(msg) {
    voices?.apply(msg);
  },
  onResult(msg) {
    hud.showResult(msg);
  },
  onError(msg) {
    hud.showError(msg);
    if (msg.code !== "E_VERSION") setTimeout(() => hud.clearError(), 4000);
  },
  onPhase(phase) {
    if (phase === "failed") hud.setStatus("protocol version mismatch");
    if (phase === "aborted") hud.setStatus("connection lost - session aborted");
  },
});

const ws = new WebSocket(url);
ws.onopen = () => session.attach({ send: (t) => ws.send(t), close: () => ws.close() });
ws.onmessage = (ev) => session.onRawMessage(String(ev.data));
ws.onclose = () => session.onClosed();

audioButton.onclick = () => {
  if (!audioCtx) {
    audioCtx = new AudioContext();
    voices = new VoiceManager(new WebAudioBackend(audioCtx));
  }
  void audioCtx.resume();
  audioButton.textContent = "audio on";
  audioButton.disabled = true;
};

canvas.onclick = () => {
  if (document.pointerLockElement !== canvas) canvas.requestPointerLock();
};

document.addEventListener("mousemove", (ev) => {
  if (document.pointerLockElement === canvas) {
    pose.aim(ev.movementX, ev.movementY);
  }
});

const KEYMAP: Record<string, keyof InputState> = {
  KeyW: "forward",
  KeyS: "back",
  KeyA: "left",
  KeyD: "right",
  KeyQ: "up",
  KeyE: "descend",
};

document.addEventListener("keydown", (ev) => {
  const dir = KEYMAP[ev.code];
  if (dir) {
    input[dir] = true;
    return;
  }
  if (ev.code === "KeyB") {
    blindfold = !blindfold;
    hud.setStatus(blindfold ? "blindfold ON (audio only)" : "blindfold off");
  } else if (ev.code === "Enter") {
    session.send({
      type: "task_control",
      action: session.phase === "running" ? "next" : "start",
      t: now(),
    });
  } else if (ev.code === "Backspace") {
    session.send({ type: "task_control", action: "end", t: now() });
  } else if (ev.code === "Space") {
    submitPoint();
  } else if (ev.code === "KeyR") {
    aimOrConfirmReport();
  } else if (ev.code === "KeyM") {
    const mode = session.taskState?.mode === "2d" ? "3d" : "2d";
    session.send({ type: "set_mode", mode });
  }
});

document.addEventListener("keyup", (ev) => {
  const dir = KEYMAP[ev.code];
  if (dir) input[dir] = false;
});

function now(): number {
  return performance.now() / 1000;
}

function submitPoint(): void {
  const height = session.taskState?.table_height ?? 0.75;
  const hit = intersectPlaneY(pose.pose, 0.5, 0.5, height);
  if (!hit) return;
  session.send({ type: "point_submit", t: now(), x: hit.x, z: hit.z });
}

function aimOrConfirmReport(): void {
  if (reportAim) {
    session.send({
      type: "obstacle_report",
      t: now(),
      position: [reportAim.x, reportAim.z],
    });
    reportAim = null;
    return;
  }
  const hit = intersectPlaneY(pose.pose, 0.5, 0.5, 0);
  if (hit) {
    reportAim = hit;
    hud.setStatus(
      `report aim (${hit.x.toFixed(2)}, ${hit.z.toFixed(2)}) - press R to confirm`,
    );
  }
}

let lastFrame = performance.now();

function frame(): void {
  const t = performance.now();
  const dt = Math.min(0.1, (t - lastFrame) / 1000);
  lastFrame = t;
  pose.step(input, dt);
  const msg = pose.poseMessage(t / 1000);
  if (msg && session.phase !== "connecting" && session.phase !== "failed") {
    session.send(msg);
  }
  renderer.draw(ctx, pose.pose, session.scene, {
    blindfold,
    tableHeight:
      session.taskState?.task === "localization"
        ? (session.taskState.table_height ?? 0.75)
        : undefined,
    startZ: session.taskState?.start_z,
    finishZ: session.taskState?.finish_z,
  });
  requestAnimationFrame(frame);
}

requestAnimationFrame(frame);
