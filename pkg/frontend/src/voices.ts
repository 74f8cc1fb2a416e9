// Keeps the set of sounding voices equal to the latest active_cells
// message. Pure diffing logic; the audio realization is behind a backend
// interface so the scheduling decisions are testable without Web Audio.
//
// Every parameter a voice needs (note frequency, azimuth, loop period)
// comes from the message itself; nothing is derived from locally cached
// tables.

import { ActiveCell, ActiveCellsMsg } from "./protocol.js";

export type VoiceKey = string;

export function voiceKey(cell: ActiveCell): VoiceKey {
  return `${cell.row}:${cell.col}:${cell.marker_id}`;
}

export interface VoiceBackend {
  start(key: VoiceKey, noteHz: number, azimuthDeg: number, periodS: number): void;
  setPeriod(key: VoiceKey, periodS: number): void;
  stop(key: VoiceKey): void;
}

export class VoiceManager {
  private active = new Map<VoiceKey, ActiveCell>();

  constructor(private backend: VoiceBackend) {}

  get keys(): VoiceKey[] {
    return [...this.active.keys()].sort();
  }

  apply(msg: ActiveCellsMsg): void {
    const incoming = new Map<VoiceKey, ActiveCell>();
    for (const cell of msg.cells) incoming.set(voiceKey(cell), cell);

    for (const [key] of this.active) {
      if (!incoming.has(key)) {
        this.backend.stop(key);
        this.active.delete(key);
      }
    }
    for (const [key, cell] of incoming) {
      const known = this.active.get(key);
      if (!known) {
        this.backend.start(key, cell.note_hz, cell.azimuth_deg, cell.period_s);
      } else if (known.period_s !== cell.period_s) {
        this.backend.setPeriod(key, cell.period_s);
      }
      this.active.set(key, cell);
    }
  }

  stopAll(): void {
    for (const [key] of this.active) this.backend.stop(key);
    this.active.clear();
  }
}
