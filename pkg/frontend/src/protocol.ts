// Wire types for echogrid/1. The client treats the server as the single
// source of truth for all encoding decisions: notes, azimuths and loop
// periods are read from messages, never computed locally.

export const PROTOCOL_VERSION = "echogrid/1";

export interface HelloMsg {
  type: "hello";
  protocol: string;
  pcm_stream?: boolean;
}

export interface PoseMsg {
  type: "pose";
  t: number;
  position: [number, number, number];
  yaw: number;
  pitch: number;
}

export interface SetModeMsg {
  type: "set_mode";
  mode: "2d" | "3d";
}

export interface TaskControlMsg {
  type: "task_control";
  action: "start" | "end" | "next";
  t?: number;
}

export interface PointSubmitMsg {
  type: "point_submit";
  t?: number;
  x: number;
  z: number;
  object_id?: number;
}

export interface ObstacleReportMsg {
  type: "obstacle_report";
  t?: number;
  position: [number, number];
}

export type ClientMsg =
  | HelloMsg
  | PoseMsg
  | SetModeMsg
  | TaskControlMsg
  | PointSubmitMsg
  | ObstacleReportMsg;

export interface SceneMarker {
  id: number;
  center: [number, number, number];
  normal: [number, number, number];
  size_m: number;
  label: string;
}

export interface SceneDoc {
  schema: string;
  bounds: { min: [number, number, number]; max: [number, number, number] };
  markers: SceneMarker[];
  colliders: { center: [number, number, number]; radius_m: number }[];
}

export interface WelcomeMsg {
  type: "welcome";
  protocol: string;
  session_id: string;
  scene: SceneDoc;
  grid: { rows: number; cols: number };
  azimuths: number[];
  notes: { row: number; name: string; frequency_hz: number }[];
  schedule: {
    session_number: number;
    task: string;
    course: number | null;
    mode: string;
  }[];
}

export interface ActiveCell {
  row: number;
  col: number;
  note_hz: number;
  azimuth_deg: number;
  period_s: number;
  marker_id: number;
  distance_m?: number;
}

export interface ActiveCellsMsg {
  type: "active_cells";
  t: number;
  cells: ActiveCell[];
}

export interface TaskStateMsg {
  type: "task_state";
  phase: "ready" | "running" | "done";
  mode: "2d" | "3d";
  session_number?: number;
  task?: "localization" | "navigation";
  course?: number | null;
  slot_index?: number;
  slots_total?: number;
  scene?: SceneDoc;
  start_z?: number;
  finish_z?: number;
  table_height?: number;
}

export interface ResultMsg {
  type: "result";
  task: "localization" | "navigation";
  per_object?: Record<string, { time_to_find: number; error_distance: number }>;
  total_time?: number;
  course_time?: number;
  verdicts?: Record<string, "seen" | "missed">;
  missed_count?: number;
}

export interface ErrorMsg {
  type: "error";
  code: "E_VERSION" | "E_PHASE" | "E_MSG" | "E_TIME";
  message: string;
}

export type ServerMsg =
  | WelcomeMsg
  | ActiveCellsMsg
  | TaskStateMsg
  | ResultMsg
  | ErrorMsg;

export function parseServerMsg(raw: string): ServerMsg | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const type = (doc as { type?: unknown }).type;
  if (
    type === "welcome" ||
    type === "active_cells" ||
    type === "task_state" ||
    type === "result" ||
    type === "error"
  ) {
    return doc as ServerMsg;
  }
  return null;
}
