import { describe, expect, it } from "vitest";

import { ActiveCell, ActiveCellsMsg } from "../src/protocol.js";
import { VoiceBackend, VoiceManager } from "../src/voices.js";

class RecordingBackend implements VoiceBackend {
  calls: string[] = [];
  live = new Map<string, { noteHz: number; azimuthDeg: number; periodS: number }>();

  start(key: string, noteHz: number, azimuthDeg: number, periodS: number): void {
    this.calls.push(`start ${key}`);
    this.live.set(key, { noteHz, azimuthDeg, periodS });
  }

  setPeriod(key: string, periodS: number): void {
    this.calls.push(`period ${key} ${periodS}`);
    const voice = this.live.get(key)!;
    voice.periodS = periodS;
  }

  stop(key: string): void {
    this.calls.push(`stop ${key}`);
    this.live.delete(key);
  }
}

function cell(row: number, col: number, markerId: number, periodS: number,
              noteHz = 164.8, azimuthDeg = 0): ActiveCell {
  return {
    row,
    col,
    marker_id: markerId,
    period_s: periodS,
    note_hz: noteHz,
    azimuth_deg: azimuthDeg,
  };
}

function msg(t: number, ...cells: ActiveCell[]): ActiveCellsMsg {
  return { type: "active_cells", t, cells };
}

describe("voice manager", () => {
  it("starts voices for new cells and stops vanished ones", () => {
    const backend = new RecordingBackend();
    const manager = new VoiceManager(backend);
    manager.apply(msg(0, cell(1, 2, 7, 0.5)));
    expect(backend.calls).toEqual(["start 1:2:7"]);
    manager.apply(msg(0.1, cell(1, 2, 7, 0.5), cell(0, 4, 9, 2.0)));
    expect(backend.calls).toEqual(["start 1:2:7", "start 0:4:9"]);
    manager.apply(msg(0.2, cell(0, 4, 9, 2.0)));
    expect(backend.calls.at(-1)).toBe("stop 1:2:7");
    expect(manager.keys).toEqual(["0:4:9"]);
  });

  it("voice set always equals the latest message", () => {
    const backend = new RecordingBackend();
    const manager = new VoiceManager(backend);
    const sequences = [
      [cell(0, 0, 1, 2), cell(1, 1, 2, 2)],
      [cell(1, 1, 2, 2)],
      [cell(2, 4, 3, 0.3), cell(1, 1, 2, 2), cell(0, 0, 1, 2)],
      [],
      [cell(2, 2, 9, 1.0)],
    ];
    let t = 0;
    for (const cells of sequences) {
      manager.apply(msg((t += 0.1), ...cells));
      const expected = cells.map((c) => `${c.row}:${c.col}:${c.marker_id}`).sort();
      expect(manager.keys).toEqual(expected);
      expect([...backend.live.keys()].sort()).toEqual(expected);
    }
  });

  it("updates the period at the backend when it changes", () => {
    const backend = new RecordingBackend();
    const manager = new VoiceManager(backend);
    manager.apply(msg(0, cell(1, 2, 7, 0.5)));
    manager.apply(msg(0.4, cell(1, 2, 7, 0.5)));
    expect(backend.calls).toEqual(["start 1:2:7"]); // unchanged: no churn
    manager.apply(msg(0.6, cell(1, 2, 7, 0.8)));
    expect(backend.calls).toEqual(["start 1:2:7", "period 1:2:7 0.8"]);
    expect(backend.live.get("1:2:7")!.periodS).toBe(0.8);
  });

  it("a marker moving cells retriggers as a new voice", () => {
    const backend = new RecordingBackend();
    const manager = new VoiceManager(backend);
    manager.apply(msg(0, cell(1, 2, 7, 2)));
    manager.apply(msg(0.1, cell(1, 3, 7, 2)));
    expect(backend.calls).toContain("stop 1:2:7");
    expect(backend.calls).toContain("start 1:3:7");
  });

  it("takes every sound parameter from the message, not local tables", () => {
    // Corrupting the client's cached welcome tables must not change what
    // the audio backend is asked to play.
    const backend = new RecordingBackend();
    const manager = new VoiceManager(backend);
    const corruptedLocalTable = { 1: 999.0 }; // pretend cache, never consulted
    void corruptedLocalTable;
    manager.apply(msg(0, cell(1, 2, 7, 0.42, 164.81378, 20)));
    const voice = backend.live.get("1:2:7")!;
    expect(voice.noteHz).toBeCloseTo(164.81378, 5);
    expect(voice.azimuthDeg).toBe(20);
    expect(voice.periodS).toBeCloseTo(0.42);
  });

  it("stopAll silences everything", () => {
    const backend = new RecordingBackend();
    const manager = new VoiceManager(backend);
    manager.apply(msg(0, cell(0, 0, 1, 2), cell(2, 4, 2, 0.3)));
    manager.stopAll();
    expect(manager.keys).toEqual([]);
    expect(backend.live.size).toBe(0);
  });
});
