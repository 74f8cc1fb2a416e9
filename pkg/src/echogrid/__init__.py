"""echogrid: deterministic simulator and sonification engine for a handheld
camera-to-audio assistive device, with task protocols, analysis tools, and a
live session server."""

__version__ = "0.1.0"

from .encoder import (
    ActiveCellSet,
    CellActivation,
    CellGrid,
    CellId,
    Mode,
    NoteSpec,
    azimuth_for_col,
    cell_note,
    loop_period,
    map_to_cell,
    note_for_row,
    update_activations,
)
from .scene import (
    CameraIntrinsics,
    CameraPose,
    Detection,
    DetectionProfile,
    LOCALIZATION_PROFILE,
    Marker,
    NAVIGATION_PROFILE,
    Scene,
    Vec3,
    detect_markers,
    project_point,
    scene_from_config,
    scene_to_config,
)

__all__ = [
    "__version__",
    "ActiveCellSet",
    "CellActivation",
    "CellGrid",
    "CellId",
    "Mode",
    "NoteSpec",
    "azimuth_for_col",
    "cell_note",
    "loop_period",
    "map_to_cell",
    "note_for_row",
    "update_activations",
    "CameraIntrinsics",
    "CameraPose",
    "Detection",
    "DetectionProfile",
    "LOCALIZATION_PROFILE",
    "Marker",
    "NAVIGATION_PROFILE",
    "Scene",
    "Vec3",
    "detect_markers",
    "project_point",
    "scene_from_config",
    "scene_to_config",
]
