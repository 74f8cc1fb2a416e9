// Pinhole camera math matching the server's conventions exactly:
// world x right / y up / z forward, yaw about +y (positive turns right),
// pitch positive up, image u right / v down, normalized [0,1]^2.

export interface Pose {
  x: number;
  y: number;
  z: number;
  yaw: number; // degrees
  pitch: number; // degrees
}

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}

const DEG = Math.PI / 180;

export const H_FOV = 60;
export const V_FOV = 45;

export function basis(pose: Pose): { forward: Vec3; right: Vec3; down: Vec3 } {
  const cy = Math.cos(pose.yaw * DEG);
  const sy = Math.sin(pose.yaw * DEG);
  const cp = Math.cos(pose.pitch * DEG);
  const sp = Math.sin(pose.pitch * DEG);
  const forward = { x: cp * sy, y: sp, z: cp * cy };
  const right = { x: cy, y: 0, z: -sy };
  const down = {
    x: right.y * forward.z - right.z * forward.y,
    y: right.z * forward.x - right.x * forward.z,
    z: right.x * forward.y - right.y * forward.x,
  };
  return { forward, right, down };
}

export function project(pose: Pose, p: Vec3): { u: number; v: number } | null {
  const { forward, right, down } = basis(pose);
  const dx = p.x - pose.x;
  const dy = p.y - pose.y;
  const dz = p.z - pose.z;
  const zc = dx * forward.x + dy * forward.y + dz * forward.z;
  if (zc <= 0) return null;
  const xc = dx * right.x + dy * right.y + dz * right.z;
  const yc = dx * down.x + dy * down.y + dz * down.z;
  const u = 0.5 + (0.5 * (xc / zc)) / Math.tan((H_FOV * DEG) / 2);
  const v = 0.5 + (0.5 * (yc / zc)) / Math.tan((V_FOV * DEG) / 2);
  if (u < 0 || u > 1 || v < 0 || v > 1) return null;
  return { u, v };
}

// Direction of the ray leaving the camera through normalized image (u, v).
export function rayThrough(pose: Pose, u: number, v: number): Vec3 {
  const { forward, right, down } = basis(pose);
  const tx = (2 * u - 1) * Math.tan((H_FOV * DEG) / 2);
  const ty = (2 * v - 1) * Math.tan((V_FOV * DEG) / 2);
  return {
    x: forward.x + tx * right.x + ty * down.x,
    y: forward.y + tx * right.y + ty * down.y,
    z: forward.z + tx * right.z + ty * down.z,
  };
}

// Intersect a camera ray with the horizontal plane y = planeY.
export function intersectPlaneY(
  pose: Pose,
  u: number,
  v: number,
  planeY: number,
): { x: number; z: number } | null {
  const dir = rayThrough(pose, u, v);
  if (Math.abs(dir.y) < 1e-9) return null;
  const t = (planeY - pose.y) / dir.y;
  if (t <= 0) return null;
  return { x: pose.x + t * dir.x, z: pose.z + t * dir.z };
}
