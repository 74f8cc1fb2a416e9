// Web Audio realization of the looping cell voices.
//
// Each voice renders its note into an AudioBuffer exactly one loop period
// long (attack, harmonic stack, exponential decay, truncation fade) and
// plays it with loop=true, so retriggering is sample-accurate on the audio
// clock. Azimuth uses the platform HRTF panner; period changes swap the
// buffer at the next loop boundary, mirroring the server's semantics.

import { VoiceBackend, VoiceKey } from "./voices.js";

const NOTE_LENGTH_S = 2.0;
const ATTACK_S = 0.005;
const FADE_S = 0.01;
const RELEASE_S = 0.01;
const HARMONICS = [1.0, 0.5, 0.33, 0.25, 0.2, 0.17];
const VOICE_GAIN = 0.15; // headroom: up to 15 cells may sound at once

interface LiveVoice {
  source: AudioBufferSourceNode;
  gain: GainNode;
  panner: PannerNode;
  noteHz: number;
  azimuthDeg: number;
  periodS: number;
  startTime: number;
}

export class WebAudioBackend implements VoiceBackend {
  private voices = new Map<VoiceKey, LiveVoice>();
  private buffers = new Map<string, AudioBuffer>();

  constructor(private ctx: AudioContext) {}

  private noteBuffer(noteHz: number, periodS: number): AudioBuffer {
    const key = `${noteHz}:${periodS.toFixed(6)}`;
    const cached = this.buffers.get(key);
    if (cached) return cached;
    const sr = this.ctx.sampleRate;
    const total = Math.max(1, Math.round(periodS * sr));
    const audible = Math.min(total, Math.round(NOTE_LENGTH_S * sr));
    const buffer = this.ctx.createBuffer(1, total, sr);
    const data = buffer.getChannelData(0);
    const decay = Math.log(1000) / NOTE_LENGTH_S;
    for (let i = 0; i < audible; i++) {
      const t = i / sr;
      let s = 0;
      for (let h = 0; h < HARMONICS.length; h++) {
        s += HARMONICS[h] * Math.sin(2 * Math.PI * noteHz * (h + 1) * t);
      }
      data[i] = s * Math.exp(-decay * t);
    }
    let peak = 0;
    for (let i = 0; i < audible; i++) peak = Math.max(peak, Math.abs(data[i]));
    if (peak > 0) {
      for (let i = 0; i < audible; i++) data[i] *= 0.9 / peak;
    }
    const attackN = Math.min(Math.round(ATTACK_S * sr), audible);
    for (let i = 0; i < attackN; i++) {
      data[i] *= 0.5 * (1 - Math.cos((Math.PI * i) / attackN));
    }
    if (audible < Math.round(NOTE_LENGTH_S * sr)) {
      const fadeN = Math.min(Math.round(FADE_S * sr), audible);
      for (let i = 0; i < fadeN; i++) {
        const k = audible - fadeN + i;
        data[k] *= 0.5 * (1 + Math.cos((Math.PI * i) / Math.max(1, fadeN - 1)));
      }
    }
    this.buffers.set(key, buffer);
    return buffer;
  }

  private makePanner(azimuthDeg: number): PannerNode {
    const panner = this.ctx.createPanner();
    panner.panningModel = "HRTF";
    panner.distanceModel = "inverse";
    panner.refDistance = 1;
    const az = (azimuthDeg * Math.PI) / 180;
    // listener faces -z in Web Audio; positive azimuth is to the right
    panner.positionX.value = Math.sin(az);
    panner.positionY.value = 0;
    panner.positionZ.value = -Math.cos(az);
    return panner;
  }

  start(key: VoiceKey, noteHz: number, azimuthDeg: number, periodS: number): void {
    this.stop(key);
    const source = this.ctx.createBufferSource();
    source.buffer = this.noteBuffer(noteHz, periodS);
    source.loop = true;
    const gain = this.ctx.createGain();
    gain.gain.value = VOICE_GAIN;
    const panner = this.makePanner(azimuthDeg);
    source.connect(gain);
    gain.connect(panner);
    panner.connect(this.ctx.destination);
    const startTime = this.ctx.currentTime;
    source.start(startTime);
    this.voices.set(key, {
      source,
      gain,
      panner,
      noteHz,
      azimuthDeg,
      periodS,
      startTime,
    });
  }

  setPeriod(key: VoiceKey, periodS: number): void {
    const voice = this.voices.get(key);
    if (!voice || voice.periodS === periodS) return;
    // swap buffers at the next loop boundary of the current period
    const now = this.ctx.currentTime;
    const elapsed = Math.max(0, now - voice.startTime);
    const loops = Math.ceil(elapsed / voice.periodS);
    const boundary = voice.startTime + loops * voice.periodS;
    voice.source.stop(boundary);
    const next = this.ctx.createBufferSource();
    next.buffer = this.noteBuffer(voice.noteHz, periodS);
    next.loop = true;
    next.connect(voice.gain);
    next.start(boundary);
    voice.source = next;
    voice.periodS = periodS;
    voice.startTime = boundary;
  }

  stop(key: VoiceKey): void {
    const voice = this.voices.get(key);
    if (!voice) return;
    const now = this.ctx.currentTime;
    voice.gain.gain.setValueAtTime(voice.gain.gain.value, now);
    voice.gain.gain.linearRampToValueAtTime(0, now + RELEASE_S);
    voice.source.stop(now + RELEASE_S);
    this.voices.delete(key);
  }
}
