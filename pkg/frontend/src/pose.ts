// Keyboard/mouse camera control with the outgoing pose message throttle:
// at most 30 messages/s, and nothing at all while the pose is unchanged.

import { Pose } from "./camera.js";
import { PoseMsg } from "./protocol.js";

export interface InputState {
  forward: boolean;
  back: boolean;
  left: boolean;
  right: boolean;
  up: boolean;
  descend: boolean;
}

export const WALK_SPEED = 1.2; // m/s
export const VERTICAL_SPEED = 0.8; // m/s
export const MOUSE_SENSITIVITY = 0.15; // degrees per pixel
export const POSE_RATE_HZ = 30;

export class PoseController {
  pose: Pose;
  private lastSent: Pose | null = null;
  private lastSendTime = -Infinity;

  constructor(start: Pose) {
    this.pose = { ...start };
  }

  aim(mouseDx: number, mouseDy: number): void {
    this.pose.yaw += mouseDx * MOUSE_SENSITIVITY;
    if (this.pose.yaw > 180) this.pose.yaw -= 360;
    if (this.pose.yaw <= -180) this.pose.yaw += 360;
    this.pose.pitch -= mouseDy * MOUSE_SENSITIVITY;
    this.pose.pitch = Math.max(-90, Math.min(90, this.pose.pitch));
  }

  step(input: InputState, dt: number): void {
    const yawRad = (this.pose.yaw * Math.PI) / 180;
    // walking moves in the horizontal heading regardless of pitch
    const fx = Math.sin(yawRad);
    const fz = Math.cos(yawRad);
    const rx = Math.cos(yawRad);
    const rz = -Math.sin(yawRad);
    let mx = 0;
    let mz = 0;
    if (input.forward) {
      mx += fx;
      mz += fz;
    }
    if (input.back) {
      mx -= fx;
      mz -= fz;
    }
    if (input.right) {
      mx += rx;
      mz += rz;
    }
    if (input.left) {
      mx -= rx;
      mz -= rz;
    }
    const norm = Math.hypot(mx, mz);
    if (norm > 0) {
      this.pose.x += (mx / norm) * WALK_SPEED * dt;
      this.pose.z += (mz / norm) * WALK_SPEED * dt;
    }
    if (input.up) this.pose.y += VERTICAL_SPEED * dt;
    if (input.descend) this.pose.y -= VERTICAL_SPEED * dt;
  }

  // Returns the pose message to send at time `now`, or null when throttled
  // or unchanged since the last send.
  poseMessage(now: number): PoseMsg | null {
    if (now - this.lastSendTime < 1 / POSE_RATE_HZ - 1e-9) return null;
    const p = this.pose;
    const last = this.lastSent;
    if (
      last &&
      last.x === p.x &&
      last.y === p.y &&
      last.z === p.z &&
      last.yaw === p.yaw &&
      last.pitch === p.pitch
    ) {
      return null;
    }
    this.lastSent = { ...p };
    this.lastSendTime = now;
    return {
      type: "pose",
      t: now,
      position: [p.x, p.y, p.z],
      yaw: p.yaw,
      pitch: p.pitch,
    };
  }
}
