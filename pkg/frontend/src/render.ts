// First-person scene painter on a 2D canvas. In blindfold mode nothing of
// the scene is drawn: the viewport goes black and only the HUD crosshair
// remains, while audio keeps running, as in the blindfolded experiment.
//
// The painter works against a minimal context interface so tests can
// substitute a recording stub for CanvasRenderingContext2D.

import { Pose, project } from "./camera.js";
import { SceneDoc } from "./protocol.js";

export interface Painter2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
}

export interface RenderOptions {
  blindfold: boolean;
  tableHeight?: number;
  startZ?: number;
  finishZ?: number;
}

export class SceneRenderer {
  constructor(
    private width: number,
    private height: number,
  ) {}

  private toPx(uv: { u: number; v: number }): { x: number; y: number } {
    return { x: uv.u * this.width, y: uv.v * this.height };
  }

  private groundLine(
    ctx: Painter2D,
    pose: Pose,
    x0: number,
    z0: number,
    x1: number,
    z1: number,
    y = 0,
  ): void {
    const steps = 16;
    let drawing = false;
    ctx.beginPath();
    for (let i = 0; i <= steps; i++) {
      const k = i / steps;
      const uv = project(pose, {
        x: x0 + (x1 - x0) * k,
        y,
        z: z0 + (z1 - z0) * k,
      });
      if (!uv) {
        drawing = false;
        continue;
      }
      const px = this.toPx(uv);
      if (drawing) ctx.lineTo(px.x, px.y);
      else ctx.moveTo(px.x, px.y);
      drawing = true;
    }
    ctx.stroke();
  }

  draw(ctx: Painter2D, pose: Pose, scene: SceneDoc | null, opts: RenderOptions): void {
    ctx.fillStyle = "#000";
    ctx.fillRect(0, 0, this.width, this.height);
    if (!opts.blindfold && scene) {
      this.drawScene(ctx, pose, scene, opts);
    }
    this.drawCrosshair(ctx);
  }

  private drawScene(ctx: Painter2D, pose: Pose, scene: SceneDoc, opts: RenderOptions): void {
    const { min, max } = scene.bounds;
    ctx.strokeStyle = "#234";
    ctx.lineWidth = 1;
    for (let z = Math.ceil(min[2]); z <= max[2]; z += 1) {
      this.groundLine(ctx, pose, min[0], z, max[0], z);
    }
    for (let x = Math.ceil(min[0]); x <= max[0]; x += 1) {
      this.groundLine(ctx, pose, x, min[2], x, max[2]);
    }
    if (opts.tableHeight !== undefined) {
      ctx.strokeStyle = "#553";
      this.groundLine(ctx, pose, -0.75, 0, 0.75, 0, opts.tableHeight);
      this.groundLine(ctx, pose, -0.75, 0.8, 0.75, 0.8, opts.tableHeight);
      this.groundLine(ctx, pose, -0.75, 0, -0.75, 0.8, opts.tableHeight);
      this.groundLine(ctx, pose, 0.75, 0, 0.75, 0.8, opts.tableHeight);
    }
    if (opts.startZ !== undefined && opts.finishZ !== undefined) {
      ctx.strokeStyle = "#163";
      this.groundLine(ctx, pose, -3, opts.startZ, 3, opts.startZ);
      ctx.strokeStyle = "#361";
      this.groundLine(ctx, pose, -3, opts.finishZ, 3, opts.finishZ);
    }
    for (const marker of scene.markers) {
      const center = {
        x: marker.center[0],
        y: marker.center[1],
        z: marker.center[2],
      };
      const uv = project(pose, center);
      if (!uv) continue;
      const px = this.toPx(uv);
      const dist = Math.hypot(
        center.x - pose.x,
        center.y - pose.y,
        center.z - pose.z,
      );
      const side = Math.max(
        2,
        ((marker.size_m / dist) * this.width) / (2 * Math.tan(Math.PI / 6)),
      );
      ctx.fillStyle = "#d8d0b0";
      ctx.fillRect(px.x - side / 2, px.y - side / 2, side, side);
      ctx.strokeStyle = "#806";
      ctx.lineWidth = 1;
      ctx.beginPath();
      ctx.arc(px.x, px.y, side * 0.7, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  private drawCrosshair(ctx: Painter2D): void {
    const cx = this.width / 2;
    const cy = this.height / 2;
    ctx.strokeStyle = "#9c9";
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(cx - 8, cy);
    ctx.lineTo(cx + 8, cy);
    ctx.moveTo(cx, cy - 8);
    ctx.lineTo(cx, cy + 8);
    ctx.stroke();
  }
}
