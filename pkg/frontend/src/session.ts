// Connection state machine. Transport is injected so the same code runs
// against a browser WebSocket, a node `ws` socket, or a fake in tests.

import {
  ActiveCellsMsg,
  ClientMsg,
  ErrorMsg,
  PROTOCOL_VERSION,
  ResultMsg,
  SceneDoc,
  ServerMsg,
  TaskStateMsg,
  WelcomeMsg,
  parseServerMsg,
} from "./protocol.js";

export interface Transport {
  send(text: string): void;
  close(): void;
}

export type SessionPhase =
  | "connecting"
  | "ready"
  | "running"
  | "done"
  | "failed"
  | "aborted";

export interface SessionHandlers {
  onActiveCells?(msg: ActiveCellsMsg): void;
  onTaskState?(msg: TaskStateMsg): void;
  onResult?(msg: ResultMsg): void;
  onError?(msg: ErrorMsg): void;
  onWelcome?(msg: WelcomeMsg): void;
  onPhase?(phase: SessionPhase): void;
}

export class Session {
  phase: SessionPhase = "connecting";
  welcome: WelcomeMsg | null = null;
  taskState: TaskStateMsg | null = null;
  lastResult: ResultMsg | null = null;
  lastError: ErrorMsg | null = null;
  scene: SceneDoc | null = null;
  versionMismatch = false;

  private transport: Transport | null = null;

  constructor(private handlers: SessionHandlers = {}) {}

  attach(transport: Transport): void {
    this.transport = transport;
    this.send({ type: "hello", protocol: PROTOCOL_VERSION });
  }

  send(msg: ClientMsg): void {
    if (!this.transport) throw new Error("session has no transport");
    this.transport.send(JSON.stringify(msg));
  }

  onRawMessage(raw: string): void {
    const msg = parseServerMsg(raw);
    if (!msg) return;
    this.onServerMsg(msg);
  }

  onServerMsg(msg: ServerMsg): void {
    switch (msg.type) {
      case "welcome":
        this.welcome = msg;
        this.scene = msg.scene;
        this.setPhase("ready");
        this.handlers.onWelcome?.(msg);
        break;
      case "task_state":
        this.taskState = msg;
        if (msg.scene) this.scene = msg.scene;
        if (msg.phase === "running") this.setPhase("running");
        else if (msg.phase === "done") this.setPhase("done");
        else this.setPhase("ready");
        this.handlers.onTaskState?.(msg);
        break;
      case "active_cells":
        this.handlers.onActiveCells?.(msg);
        break;
      case "result":
        this.lastResult = msg;
        this.handlers.onResult?.(msg);
        break;
      case "error":
        this.lastError = msg;
        // A protocol-version mismatch is fatal; everything else (phase or
        // payload rejections) is surfaced but the session stays usable.
        if (msg.code === "E_VERSION") {
          this.versionMismatch = true;
          this.setPhase("failed");
          this.transport?.close();
        }
        this.handlers.onError?.(msg);
        break;
    }
  }

  onClosed(): void {
    if (this.phase !== "done" && this.phase !== "failed") {
      this.setPhase("aborted");
    }
  }

  private setPhase(phase: SessionPhase): void {
    if (this.phase === phase) return;
    this.phase = phase;
    this.handlers.onPhase?.(phase);
  }
}
