"""Optical communication between a blinking screen marker and an event camera.

The package is organized along the data path: message bytes are error-coded
and rendered into a frame sequence (``codec``, ``marker``), a virtual event
camera observes the screen under motion (``simulator``), and the receiver
recovers both the camera pose and the payload from the raw event stream
(``detector``, ``tracker``, ``decoder``, tied together in ``pipeline``).
"""

from .events import (
    EVENT_DTYPE,
    Event,
    FilterConfig,
    OrderingError,
    SurfaceOfActiveEvents,
    events_array,
    load_events_csv,
    neighborhood_filter,
    normalize_sae,
    refractory_filter,
    sae_update,
    save_events_csv,
)
from .geometry import CameraIntrinsics, Pose, project
from .marker import FrameSchedule, MarkerLayout, MarkerSpec, build_layout
from .codec import BitMatrix, RsParams, select_rs_params

__all__ = [
    "EVENT_DTYPE",
    "Event",
    "FilterConfig",
    "OrderingError",
    "SurfaceOfActiveEvents",
    "events_array",
    "load_events_csv",
    "save_events_csv",
    "neighborhood_filter",
    "normalize_sae",
    "refractory_filter",
    "sae_update",
    "CameraIntrinsics",
    "Pose",
    "project",
    "FrameSchedule",
    "MarkerLayout",
    "MarkerSpec",
    "build_layout",
    "BitMatrix",
    "RsParams",
    "select_rs_params",
]

__version__ = "0.1.0"
