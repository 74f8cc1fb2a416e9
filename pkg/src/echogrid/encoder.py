"""Mapping from detections to the 15-cell grid and looping sound state.

The camera image is split into 3 rows x 5 columns. Each row is tied to a
piano note (G3 top, E3 middle, C3 bottom) and each column to a playback
azimuth, symmetric about straight ahead. A detected marker turns its cell's
note on; the note loops until the marker is no longer detected. In 2D mode
every loop lasts exactly 2 s; in 3D mode the loop period in seconds equals
the marker distance in meters (clamped to the detection range), so closer
objects repeat faster. Period changes take effect at loop boundaries only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

from .scene import Detection, DetectionProfile

__all__ = [
    "Mode",
    "CellGrid",
    "CellId",
    "NoteSpec",
    "CellActivation",
    "ActiveCellSet",
    "NOTE_FREQUENCIES",
    "map_to_cell",
    "loop_period",
    "note_for_row",
    "azimuth_for_col",
    "cell_note",
    "update_activations",
]

TWO_D_PERIOD_S = 2.0


class Mode(enum.Enum):
    TWO_D = "2d"
    THREE_D = "3d"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = str(text).strip().lower()
        for mode in cls:
            if key == mode.value:
                return mode
        raise ValueError(f"unknown mode {text!r} (expected '2d' or '3d')")


def _equal_temperament(midi: int) -> float:
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


# Row 0 is the top of the image. Top cells play G3, middle E3, bottom C3.
ROW_NOTES = ("G3", "E3", "C3")
NOTE_FREQUENCIES = {
    "C3": _equal_temperament(48),
    "E3": _equal_temperament(52),
    "G3": _equal_temperament(55),
}


class CellId(NamedTuple):
    row: int
    col: int


class NoteSpec(NamedTuple):
    name: str
    frequency: float
    azimuth: float


@dataclass(frozen=True)
class CellGrid:
    """3x5 image partition with per-column playback azimuths (degrees)."""

    rows: int = 3
    cols: int = 5
    azimuths: tuple[float, ...] = (-40.0, -20.0, 0.0, 20.0, 40.0)

    def __post_init__(self):
        if self.rows != 3 or self.cols != 5 or self.rows * self.cols != 15:
            raise ValueError("grid must be 3 rows x 5 columns")
        object.__setattr__(self, "azimuths", tuple(float(a) for a in self.azimuths))
        if len(self.azimuths) != self.cols:
            raise ValueError("need one azimuth per column")
        for a in self.azimuths:
            if not -90.0 <= a <= 90.0:
                raise ValueError(f"azimuth {a} outside [-90, 90]")


DEFAULT_GRID = CellGrid()


def map_to_cell(image_point: tuple[float, float], grid: CellGrid = DEFAULT_GRID) -> CellId:
    """Map a normalized image point to its cell.

    Cells are half-open: a point on an interior boundary belongs to the
    lower-index cell; u = 1.0 or v = 1.0 clamps to the last column/row.
    """
    u, v = image_point
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise ValueError(f"image point ({u}, {v}) outside [0, 1]^2")
    row = min(int(v * grid.rows), grid.rows - 1)
    col = min(int(u * grid.cols), grid.cols - 1)
    return CellId(row, col)


def loop_period(mode: Mode, distance: float, profile: DetectionProfile) -> float:
    """Loop period in seconds for a marker at the given distance."""
    if distance <= 0.0:
        raise ValueError(f"distance must be positive, got {distance}")
    if mode is Mode.TWO_D:
        return TWO_D_PERIOD_S
    return min(max(distance, profile.min_range), profile.max_range)


def note_for_row(row: int) -> NoteSpec:
    """Note name and equal-temperament frequency for a grid row.

    The azimuth field is the median-plane default; combine with
    azimuth_for_col (or use cell_note) for a cell's full spec.
    """
    if not 0 <= row <= 2:
        raise ValueError(f"row {row} outside 0..2")
    name = ROW_NOTES[row]
    return NoteSpec(name, NOTE_FREQUENCIES[name], 0.0)


def azimuth_for_col(col: int, grid: CellGrid = DEFAULT_GRID) -> float:
    if not 0 <= col < grid.cols:
        raise ValueError(f"col {col} outside 0..{grid.cols - 1}")
    return grid.azimuths[col]


def cell_note(cell: CellId, grid: CellGrid = DEFAULT_GRID) -> NoteSpec:
    name, freq, _ = note_for_row(cell.row)
    return NoteSpec(name, freq, azimuth_for_col(cell.col, grid))


@dataclass(frozen=True)
class CellActivation:
    """One sounding (cell, marker) pair.

    `period` is the current loop's period; `distance` tracks the latest
    measurement and feeds the period recomputed at the next loop boundary.
    """

    cell: CellId
    marker_id: int
    distance: float
    first_seen: float
    loop_phase: float
    period: float

    def __post_init__(self):
        if self.distance <= 0.0:
            raise ValueError("activation distance must be positive")
        if not 0.0 <= self.loop_phase < self.period:
            raise ValueError(
                f"loop_phase {self.loop_phase} outside [0, {self.period})"
            )

    @property
    def key(self) -> tuple[CellId, int]:
        return (self.cell, self.marker_id)


@dataclass(frozen=True)
class ActiveCellSet:
    activations: tuple[CellActivation, ...] = ()
    mode: Mode = Mode.TWO_D
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "activations", tuple(self.activations))
        keys = [a.key for a in self.activations]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (cell, marker) activation")

    def by_key(self) -> dict[tuple[CellId, int], CellActivation]:
        return {a.key: a for a in self.activations}


def _advance_phase(phase: float, period: float, dt: float, mode: Mode,
                   distance: float, profile: DetectionProfile) -> tuple[float, float]:
    """Advance a loop by dt; the period is re-derived from the latest
    distance each time a loop boundary is crossed."""
    remaining = dt
    while phase + remaining >= period:
        remaining -= period - phase
        phase = 0.0
        period = loop_period(mode, distance, profile)
    return phase + remaining, period


def update_activations(
    prev: ActiveCellSet,
    detections: list[Detection],
    grid: CellGrid,
    mode: Mode,
    now: float,
    profile: DetectionProfile,
) -> ActiveCellSet:
    """Pure state transition from one detection frame to the next.

    New (cell, marker) pairs start looping at phase 0, vanished pairs are
    dropped, survivors advance by the elapsed time. A marker that moved to a
    different cell counts as a removal plus a new trigger.
    """
    if now < prev.timestamp:
        raise ValueError(f"time regression: {now} < {prev.timestamp}")
    dt = now - prev.timestamp
    previous = prev.by_key()
    out: list[CellActivation] = []
    for det in detections:
        cell = map_to_cell(det.image_point, grid)
        key = (cell, det.marker_id)
        old = previous.get(key)
        if old is None:
            out.append(
                CellActivation(
                    cell=cell,
                    marker_id=det.marker_id,
                    distance=det.distance,
                    first_seen=now,
                    loop_phase=0.0,
                    period=loop_period(mode, det.distance, profile),
                )
            )
        else:
            phase, period = _advance_phase(
                old.loop_phase, old.period, dt, mode, det.distance, profile
            )
            out.append(
                CellActivation(
                    cell=cell,
                    marker_id=det.marker_id,
                    distance=det.distance,
                    first_seen=old.first_seen,
                    loop_phase=phase,
                    period=period,
                )
            )
    out.sort(key=lambda a: (a.cell.row, a.cell.col, a.marker_id))
    return ActiveCellSet(tuple(out), mode, now)
