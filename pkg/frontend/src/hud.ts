// Task HUD and status text. Elements are passed in as plain text sinks so
// the logic is testable without a DOM.

import { ErrorMsg, ResultMsg, TaskStateMsg } from "./protocol.js";

export interface TextSink {
  textContent: string | null;
}

export interface HudElements {
  status: TextSink;
  task: TextSink;
  result: TextSink;
  error: TextSink;
}

export class Hud {
  constructor(private el: HudElements) {}

  setStatus(text: string): void {
    this.el.status.textContent = text;
  }

  showTaskState(msg: TaskStateMsg): void {
    if (msg.phase === "done") {
      this.el.task.textContent = "all sessions complete";
      return;
    }
    const course = msg.course ? ` course ${msg.course}` : "";
    const slot =
      msg.slot_index !== undefined && msg.slots_total !== undefined
        ? ` [${msg.slot_index + 1}/${msg.slots_total}]`
        : "";
    this.el.task.textContent =
      `session ${msg.session_number ?? "?"} ` +
      `${msg.task ?? ""}${course} (${msg.mode})${slot} - ${msg.phase}`;
  }

  showResult(msg: ResultMsg): void {
    if (msg.task === "localization" && msg.per_object) {
      const parts = Object.entries(msg.per_object).map(
        ([name, r]) =>
          `${name}: ${r.error_distance.toFixed(2)} m in ${r.time_to_find.toFixed(1)} s`,
      );
      this.el.result.textContent =
        `localization done (${(msg.total_time ?? 0).toFixed(1)} s) | ` +
        parts.join(" | ");
    } else if (msg.task === "navigation") {
      this.el.result.textContent =
        `course done in ${(msg.course_time ?? 0).toFixed(1)} s, ` +
        `${msg.missed_count ?? 0} missed`;
    }
  }

  showError(msg: ErrorMsg): void {
    this.el.error.textContent = `${msg.code}: ${msg.message}`;
  }

  clearError(): void {
    this.el.error.textContent = "";
  }
}
