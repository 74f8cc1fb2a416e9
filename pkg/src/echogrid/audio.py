"""Note synthesis, binaural spatialization, and block-based mixing.

The sound path mirrors the physical device: each active grid cell plays a
piano-like note whose pitch encodes the row and whose binaural azimuth
encodes the column. Notes are retriggered at every loop boundary; in 3D
mode the loop period equals the marker distance, so the audible note is
truncated (with a short fade) whenever the period is shorter than the
nominal 2 s note.

Spatialization convolves the mono note with the left/right impulse
responses of the nearest-azimuth entry in an HrirSet. A parametric
fallback set built from the Woodworth ITD model plus a broadband ILD is
bundled so no measured HRIR data is required.
"""

from __future__ import annotations

import io
import json
import math
import os
import wave
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .encoder import ActiveCellSet, CellGrid, CellId, DEFAULT_GRID, cell_note

__all__ = [
    "SAMPLE_RATE",
    "NOTE_LENGTH_S",
    "HrirSet",
    "HrirEntry",
    "NoteSample",
    "AudioBlock",
    "Mixer",
    "HrirError",
    "synth_note",
    "parametric_hrir",
    "default_hrir",
    "load_hrir",
    "save_hrir",
    "spatialize",
    "render_block",
    "render_offline",
    "snapshot_timeline",
    "render_timeline",
    "frames_to_pcm16",
    "write_wav_bytes",
]

SAMPLE_RATE = 44100
NOTE_LENGTH_S = 2.0
ATTACK_S = 0.005
TRUNCATE_FADE_S = 0.010
RELEASE_FADE_S = 0.010
LIMITER_KNEE = 0.95
# Per-voice headroom: up to 15 cells may sound at once, and the mix must
# stay essentially linear (the soft limiter only catches transients).
VOICE_GAIN = 0.15

HRIR_SCHEMA = "echogrid-hrir/1"

# Woodworth spherical-head model constants.
HEAD_RADIUS_M = 0.0875
SPEED_OF_SOUND = 343.0
ILD_DB_AT_SIDE = 6.0

HARMONIC_AMPLITUDES = (1.0, 0.5, 0.33, 0.25, 0.2, 0.17)


@dataclass(frozen=True)
class NoteSample:
    samples: np.ndarray
    sample_rate: int
    nominal_length: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("note contains non-finite samples")
        if np.max(np.abs(self.samples), initial=0.0) > 1.0:
            raise ValueError("note peak exceeds 1.0")


@dataclass(frozen=True)
class HrirEntry:
    azimuth: float
    left: np.ndarray
    right: np.ndarray


@dataclass(frozen=True)
class HrirSet:
    sample_rate: int
    entries: tuple[HrirEntry, ...]

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if len(self.entries) < 2:
            raise ValueError("need at least 2 azimuth entries")
        azimuths = [e.azimuth for e in self.entries]
        if any(b <= a for a, b in zip(azimuths, azimuths[1:])):
            raise ValueError("azimuths must be strictly increasing")
        lengths = {len(e.left) for e in self.entries} | {len(e.right) for e in self.entries}
        if len(lengths) != 1:
            raise ValueError("all impulse responses must share one length")

    @property
    def azimuths(self) -> tuple[float, ...]:
        return tuple(e.azimuth for e in self.entries)

    def nearest(self, azimuth: float) -> HrirEntry:
        """Nearest-azimuth entry; ties break toward the median plane."""
        return min(self.entries, key=lambda e: (abs(e.azimuth - azimuth), abs(e.azimuth), e.azimuth))


@dataclass(frozen=True)
class AudioBlock:
    frames: np.ndarray  # shape (n, 2), float64, |sample| <= 1 after limiting
    sample_rate: int
    start_time: float


def synth_note(frequency: float, nominal_length: float = NOTE_LENGTH_S,
               sample_rate: int = SAMPLE_RATE) -> NoteSample:
    """Additive piano surrogate.

    Fundamental plus harmonics 2..6 at relative amplitudes 1, 0.5, 0.33,
    0.25, 0.2, 0.17, all under an exponential decay reaching -60 dB at
    nominal_length, with a 5 ms raised-cosine attack. Peak-normalized
    to 0.9.
    """
    if frequency <= 0.0:
        raise ValueError("frequency must be positive")
    n = int(round(nominal_length * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for k, amp in enumerate(HARMONIC_AMPLITUDES, start=1):
        x += amp * np.sin(2.0 * math.pi * frequency * k * t)
    # -60 dB (factor 1e-3) at t = nominal_length.
    x *= np.exp(-(math.log(1000.0) / nominal_length) * t)
    attack_n = min(int(round(ATTACK_S * sample_rate)), n)
    if attack_n > 0:
        ramp = 0.5 * (1.0 - np.cos(math.pi * np.arange(attack_n) / attack_n))
        x[:attack_n] *= ramp
    peak = np.max(np.abs(x))
    if peak > 0.0:
        x *= 0.9 / peak
    return NoteSample(x, sample_rate, nominal_length)


def woodworth_itd(azimuth_deg: float) -> float:
    """Interaural time difference in seconds for a source at the azimuth."""
    th = math.radians(abs(azimuth_deg))
    return (HEAD_RADIUS_M / SPEED_OF_SOUND) * (th + math.sin(th))


def parametric_hrir(azimuths, sample_rate: int = SAMPLE_RATE) -> HrirSet:
    """Impulse-pair HRIR fallback.

    Each entry delays the far ear by the Woodworth ITD (rounded to whole
    samples) and attenuates it by 6 dB * sin(azimuth). The near ear is a
    unit impulse. All responses are padded to one shared length.
    """
    azimuths = [float(a) for a in azimuths]
    if any(b <= a for a, b in zip(azimuths, azimuths[1:])):
        raise ValueError("azimuths must be strictly increasing")
    if any(not -90.0 <= a <= 90.0 for a in azimuths):
        raise ValueError("azimuths must lie within [-90, 90]")
    delays = {a: int(round(woodworth_itd(a) * sample_rate)) for a in azimuths}
    length = max(delays.values()) + 1
    entries = []
    for a in azimuths:
        near = np.zeros(length)
        far = np.zeros(length)
        near[0] = 1.0
        far_gain = 10.0 ** (-ILD_DB_AT_SIDE * math.sin(math.radians(abs(a))) / 20.0)
        far[delays[a]] = far_gain
        if a >= 0.0:
            left, right = far, near  # source on the right: left ear is far
        else:
            left, right = near, far
        if a == 0.0:
            left = right = near
        entries.append(HrirEntry(a, left, right))
    return HrirSet(sample_rate, tuple(entries))


DEFAULT_HRIR_AZIMUTHS = (-60.0, -40.0, -20.0, 0.0, 20.0, 40.0, 60.0)


def default_hrir(sample_rate: int = SAMPLE_RATE) -> HrirSet:
    """Bundled 7-azimuth set covering the grid's column span."""
    env_dir = os.environ.get("ECHOGRID_HRIR_DIR")
    if env_dir:
        return load_hrir(env_dir)
    return parametric_hrir(DEFAULT_HRIR_AZIMUTHS, sample_rate)


class HrirError(ValueError):
    pass


def _read_mono_wav(path) -> tuple[int, np.ndarray]:
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise HrirError(f"{path}: expected a mono file")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise HrirError(f"{path}: unsupported sample format {data.dtype}")
    return rate, data


def load_hrir(directory) -> HrirSet:
    """Load an HRIR directory: index.json plus <azimuth>_L.wav/<azimuth>_R.wav."""
    index_path = os.path.join(directory, "index.json")
    try:
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    except FileNotFoundError:
        raise HrirError(f"{index_path}: missing index.json")
    except json.JSONDecodeError as exc:
        raise HrirError(f"{index_path}: invalid JSON: {exc}")
    if index.get("schema") != HRIR_SCHEMA:
        raise HrirError(f"{index_path}: unsupported schema {index.get('schema')!r}")
    sample_rate = int(index["sample_rate"])
    azimuths = index["azimuths"]
    if sorted(set(azimuths)) != list(azimuths) or len(set(azimuths)) != len(azimuths):
        raise HrirError(f"{index_path}: azimuths must be strictly increasing")
    entries = []
    for az in azimuths:
        pair = {}
        for channel in ("L", "R"):
            path = os.path.join(directory, f"{int(az)}_{channel}.wav")
            if not os.path.exists(path):
                raise HrirError(f"missing channel file {path}")
            rate, data = _read_mono_wav(path)
            if rate != sample_rate:
                raise HrirError(f"{path}: sample rate {rate} != index {sample_rate}")
            pair[channel] = data
        if len(pair["L"]) != len(pair["R"]):
            raise HrirError(f"azimuth {az}: left/right lengths differ")
        entries.append(HrirEntry(float(az), pair["L"], pair["R"]))
    lengths = {len(e.left) for e in entries}
    if len(lengths) != 1:
        raise HrirError("impulse responses have mismatched lengths across azimuths")
    return HrirSet(sample_rate, tuple(entries))


def save_hrir(hrirs: HrirSet, directory) -> None:
    """Write an HrirSet in the directory layout load_hrir reads (float32)."""
    from scipy.io import wavfile

    os.makedirs(directory, exist_ok=True)
    index = {
        "schema": HRIR_SCHEMA,
        "sample_rate": hrirs.sample_rate,
        "azimuths": [int(e.azimuth) for e in hrirs.entries],
    }
    with open(os.path.join(directory, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
    for e in hrirs.entries:
        wavfile.write(os.path.join(directory, f"{int(e.azimuth)}_L.wav"),
                      hrirs.sample_rate, e.left.astype(np.float32))
        wavfile.write(os.path.join(directory, f"{int(e.azimuth)}_R.wav"),
                      hrirs.sample_rate, e.right.astype(np.float32))


def _convolve(signal: np.ndarray, ir: np.ndarray) -> np.ndarray:
    if len(ir) <= 64:
        return np.convolve(signal, ir)
    return fftconvolve(signal, ir)


def spatialize(note, azimuth: float, hrirs: HrirSet) -> np.ndarray:
    """Convolve a mono note with the nearest-azimuth IR pair.

    Returns float64 stereo of length len(note) + ir_length - 1.
    """
    if isinstance(note, NoteSample):
        if note.sample_rate != hrirs.sample_rate:
            raise ValueError(
                f"sample-rate mismatch: note {note.sample_rate} vs hrir {hrirs.sample_rate}"
            )
        mono = note.samples
    else:
        mono = np.asarray(note, dtype=np.float64)
    entry = hrirs.nearest(azimuth)
    left = _convolve(mono, entry.left)
    right = _convolve(mono, entry.right)
    return np.column_stack([left, right])


def _soft_clip(frames: np.ndarray, knee: float = LIMITER_KNEE) -> np.ndarray:
    """Linear below the knee, tanh-compressed above; output within [-1, 1]."""
    mag = np.abs(frames)
    over = mag > knee
    if not np.any(over):
        return frames
    out = frames.copy()
    span = 1.0 - knee
    out[over] = np.sign(frames[over]) * (knee + span * np.tanh((mag[over] - knee) / span))
    return out


@dataclass
class _Instance:
    start: int  # absolute sample index of the onset
    buffer: np.ndarray  # stereo (n, 2)


@dataclass
class _Voice:
    cell: CellId
    marker_id: int
    latest_period_s: float
    next_onset: int
    instances: list = field(default_factory=list)
    released_at: int | None = None


class Mixer:
    """Voice scheduler and block renderer (the mutable mixer state).

    One voice per (cell, marker) activation. The voice retriggers its
    spatialized note at every loop boundary; the period for each new loop is
    taken from the most recent snapshot. Released voices fade out over 10 ms
    and drain their convolution tails instead of being cut.
    """

    def __init__(self, grid: CellGrid = DEFAULT_GRID, hrirs: HrirSet | None = None,
                 sample_rate: int = SAMPLE_RATE, master_gain: float = 1.0,
                 voice_gain: float = VOICE_GAIN,
                 note_length: float = NOTE_LENGTH_S, cache_size: int = 256):
        self.grid = grid
        self.hrirs = hrirs if hrirs is not None else default_hrir(sample_rate)
        if self.hrirs.sample_rate != sample_rate:
            raise ValueError("hrir sample rate does not match mixer")
        self.sample_rate = sample_rate
        self.master_gain = master_gain
        self.voice_gain = voice_gain
        self.note_length = note_length
        self.cursor = 0
        self._voices: dict[tuple[CellId, int], _Voice] = {}
        self._draining: list[_Voice] = []
        self._mono_cache: dict[float, np.ndarray] = {}
        self._buffer_cache: OrderedDict[tuple[int, int, int], np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self._release_n = max(1, int(round(RELEASE_FADE_S * sample_rate)))

    # -- voice buffer construction ------------------------------------------

    def _mono(self, frequency: float) -> np.ndarray:
        cached = self._mono_cache.get(frequency)
        if cached is None:
            cached = synth_note(frequency, self.note_length, self.sample_rate).samples
            self._mono_cache[frequency] = cached
        return cached

    def _buffer(self, cell: CellId, period_samples: int) -> np.ndarray:
        key = (cell.row, cell.col, period_samples)
        cached = self._buffer_cache.get(key)
        if cached is not None:
            self._buffer_cache.move_to_end(key)
            return cached
        spec = cell_note(cell, self.grid)
        mono = self._mono(spec.frequency)
        audible = min(period_samples, len(mono))
        seg = mono[:audible].copy()
        if audible < len(mono):
            fade_n = min(int(round(TRUNCATE_FADE_S * self.sample_rate)), audible)
            if fade_n > 1:
                ramp = 0.5 * (1.0 + np.cos(math.pi * np.arange(fade_n) / (fade_n - 1)))
                seg[-fade_n:] *= ramp
        # Pull any residual DC out of the loop segment so identical-period
        # voices cannot stack a net offset. The correction window has unit
        # mean and exactly-zero endpoints, so the loop joints stay at 0 and
        # the convolution output stays zero-mean per channel.
        if audible > 2:
            bump = 1.0 - np.cos(2.0 * math.pi * np.arange(audible) / (audible - 1))
            bump /= np.mean(bump)
            seg -= np.mean(seg) * bump
        stereo = spatialize(seg, spec.azimuth, self.hrirs) * self.voice_gain
        self._buffer_cache[key] = stereo
        if len(self._buffer_cache) > self._cache_size:
            self._buffer_cache.popitem(last=False)
        return stereo

    def _period_samples(self, period_s: float) -> int:
        return max(1, int(round(period_s * self.sample_rate)))

    # -- snapshot intake ------------------------------------------------------

    def set_active(self, snapshot: ActiveCellSet) -> None:
        """Adopt the latest activation snapshot (idempotent for a repeat)."""
        incoming = snapshot.by_key()
        for key, voice in list(self._voices.items()):
            if key not in incoming:
                voice.released_at = self.cursor
                self._draining.append(voice)
                del self._voices[key]
        for key, act in incoming.items():
            voice = self._voices.get(key)
            if voice is None:
                phase_n = int(round(act.loop_phase * self.sample_rate))
                period_n = self._period_samples(act.period)
                if phase_n == 0:
                    next_onset = self.cursor
                else:
                    # Joined mid-loop: pick the schedule up at the next boundary.
                    next_onset = self.cursor - phase_n + period_n
                self._voices[key] = _Voice(
                    cell=act.cell,
                    marker_id=act.marker_id,
                    latest_period_s=act.period,
                    next_onset=max(next_onset, self.cursor),
                )
            else:
                voice.latest_period_s = act.period

    # -- rendering -------------------------------------------------------------

    def _mix_instance(self, out: np.ndarray, start: int, end: int,
                      inst: _Instance, released_at: int | None) -> bool:
        """Add the instance's overlap with [start, end) into out.

        Returns True when the instance still has audible material after `end`.
        """
        ib, ie = inst.start, inst.start + len(inst.buffer)
        if released_at is not None:
            ie = min(ie, released_at + self._release_n)
        lo, hi = max(ib, start), min(ie, end)
        if lo < hi:
            chunk = inst.buffer[lo - ib:hi - ib]
            if released_at is not None and hi > released_at:
                idx = np.arange(lo, hi)
                gain = np.clip(1.0 - (idx - released_at) / self._release_n, 0.0, 1.0)
                chunk = chunk * gain[:, None]
            out[lo - start:hi - start] += chunk
        return ie > end

    def render(self, n_frames: int) -> AudioBlock:
        if n_frames <= 0:
            raise ValueError("n_frames must be positive")
        start = self.cursor
        end = start + n_frames
        out = np.zeros((n_frames, 2))

        for key in sorted(self._voices, key=lambda k: (k[0].row, k[0].col, k[1])):
            voice = self._voices[key]
            while voice.next_onset < end:
                period_n = self._period_samples(voice.latest_period_s)
                voice.instances.append(
                    _Instance(voice.next_onset, self._buffer(voice.cell, period_n))
                )
                voice.next_onset += period_n
            voice.instances = [
                inst for inst in voice.instances
                if self._mix_instance(out, start, end, inst, None)
            ]

        alive = []
        for voice in self._draining:
            voice.instances = [
                inst for inst in voice.instances
                if self._mix_instance(out, start, end, inst, voice.released_at)
            ]
            if voice.instances:
                alive.append(voice)
        self._draining = alive

        if self.master_gain != 1.0:
            out *= self.master_gain
        out = _soft_clip(out)
        self.cursor = end
        return AudioBlock(out, self.sample_rate, start / self.sample_rate)


def render_block(active: ActiveCellSet, state: Mixer, n_frames: int,
                 sample_rate: int | None = None) -> AudioBlock:
    """Adopt the snapshot and render the next block of frames."""
    if sample_rate is not None and sample_rate != state.sample_rate:
        raise ValueError("sample_rate does not match mixer state")
    state.set_active(active)
    return state.render(n_frames)


# -- offline rendering ---------------------------------------------------------


def snapshot_timeline(log, scene, config) -> tuple[list[tuple[float, ActiveCellSet]], float]:
    """Replay a session log's pose track through the detection pipeline.

    Returns ([(time, snapshot), ...], duration) with times relative to the
    start of the session.
    """
    from .encoder import Mode, update_activations
    from .scene import CameraPose, Vec3, detect_markers

    pose_events = [e for e in log.events if e.kind == "pose"]
    if not pose_events:
        raise ValueError("log contains no pose timeline")
    times = [e.t for e in log.events]
    t0 = min(times)
    for e in log.events:
        if e.kind == "task_start":
            t0 = e.t
            break
    t_end = max(times)
    for e in log.events:
        if e.kind == "task_end":
            t_end = e.t
    mode = Mode.parse(log.header.mode)

    snapshots: list[tuple[float, ActiveCellSet]] = []
    active = ActiveCellSet((), mode, 0.0)
    for e in pose_events:
        if e.t < t0 or e.t > t_end:
            continue
        t_rel = e.t - t0
        pose = CameraPose(
            Vec3(*e.payload["position"]),
            float(e.payload["yaw"]),
            float(e.payload["pitch"]),
        )
        detections = detect_markers(scene, pose, config.intrinsics, config.profile,
                                    occlusion=config.occlusion)
        active = update_activations(active, detections, config.grid, mode, t_rel,
                                    config.profile)
        snapshots.append((t_rel, active))
    return snapshots, t_end - t0


def render_timeline(snapshots, duration: float, mixer: Mixer,
                    block_size: int = 4096) -> np.ndarray:
    """Render a snapshot timeline to a stereo float array.

    Snapshots are applied exactly at their sample-quantized times; rendering
    between events proceeds in blocks of at most block_size frames. The
    result is block-size independent.
    """
    sr = mixer.sample_rate
    total = int(round(duration * sr))
    pieces: list[np.ndarray] = []

    def render_to(target: int):
        while mixer.cursor < target:
            n = min(block_size, target - mixer.cursor)
            pieces.append(mixer.render(n).frames)

    for t, snap in snapshots:
        render_to(min(int(round(t * sr)), total))
        mixer.set_active(snap)
    render_to(total)
    if not pieces:
        return np.zeros((0, 2))
    return np.concatenate(pieces, axis=0)


def frames_to_pcm16(frames: np.ndarray) -> np.ndarray:
    clipped = np.clip(frames, -1.0, 1.0)
    return np.rint(clipped * 32767.0).astype(np.int16)


def write_wav_bytes(frames: np.ndarray, sample_rate: int = SAMPLE_RATE) -> bytes:
    """Encode float stereo frames as a PCM16 RIFF/WAVE byte string."""
    pcm = frames_to_pcm16(frames)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(2)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())
    return buf.getvalue()


def render_offline(log, scene, config=None, hrirs: HrirSet | None = None,
                   sample_rate: int = SAMPLE_RATE) -> bytes:
    """Deterministically render a recorded session to WAV bytes (PCM16 stereo).

    The pose timeline drives the same detection -> activation -> mixing
    pipeline the live engine uses, so replaying a log is bit-reproducible.
    """
    from .tasks import EngineConfig, profile_for_task
    from .encoder import Mode

    if config is None:
        config = EngineConfig(
            mode=Mode.parse(log.header.mode),
            profile=profile_for_task(log.header.task),
        )
    snapshots, duration = snapshot_timeline(log, scene, config)
    mixer = Mixer(grid=config.grid, hrirs=hrirs, sample_rate=sample_rate)
    frames = render_timeline(snapshots, duration, mixer)
    return write_wav_bytes(frames, sample_rate)
