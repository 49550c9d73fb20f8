"""Dynamic marker geometry and per-frame bitmaps.

The marker nests, from the center out: an n x n payload; a one-cell
blinking ring (interior locator) whose left and bottom sides are solid and
whose top and right sides are dashed, giving the orientation-defining
"L" shape; and a static three-cell ring (exterior locator) of black, white,
black layers. Total side length is therefore n + 8 cells. The white ring's
two boundary squares provide the eight salient edges used for tracking.

Transmission alternates data frames (all elements) with blank frames
(exterior locator only) at the display's video rate, so consecutive data
frames never interfere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

DATA = "DATA"
BLANK = "BLANK"


class CellRole(IntEnum):
    PAYLOAD = 0
    INTERIOR_SOLID = 1
    INTERIOR_DASHED = 2
    EXTERIOR_WHITE = 3
    EXTERIOR_BLACK = 4


@dataclass(frozen=True)
class MarkerSpec:
    payload_side: int = 16
    physical_side_m: float = 0.272
    video_rate_hz: float = 60.0

    def __post_init__(self):
        if self.payload_side < 4 or self.payload_side % 2 != 0:
            raise ValueError("payload side must be an even count >= 4")
        if self.physical_side_m <= 0 or self.video_rate_hz <= 0:
            raise ValueError("physical size and video rate must be positive")

    @property
    def data_rate_hz(self) -> float:
        """Data-frame frequency under data/blank alternation."""
        return self.video_rate_hz / 2.0

    @property
    def total_side(self) -> int:
        return self.payload_side + 8

    @property
    def cell_size_m(self) -> float:
        return self.physical_side_m / self.total_side


@dataclass(frozen=True)
class MarkerLayout:
    spec: MarkerSpec
    roles: np.ndarray          # (total, total) CellRole values
    dash_lit: np.ndarray       # (total, total) bool, dashed cells lit in data frames
    edges: np.ndarray          # (8, 2, 3) 3D endpoints of the salient edges, meters
    ring_outer_corners: np.ndarray  # (4, 3) white ring outer square, TL TR BR BL
    ring_inner_corners: np.ndarray  # (4, 3) white ring inner square, TL TR BR BL

    @property
    def n(self) -> int:
        return self.spec.payload_side

    @property
    def total(self) -> int:
        return self.spec.total_side

    @property
    def cell_size_m(self) -> float:
        return self.spec.cell_size_m

    def payload_slice(self) -> tuple[slice, slice]:
        return slice(4, 4 + self.n), slice(4, 4 + self.n)

    def interior_outer_corners_m(self) -> np.ndarray:
        """Outer square of the interior locator, order BL BR TR TL.

        This is the quad the detector recovers; corner 0 is the corner shared
        by the two solid ("L") sides.
        """
        cs = self.cell_size_m
        lo, hi = 3 * cs, (self.total - 3) * cs
        return np.array(
            [[lo, hi, 0.0], [hi, hi, 0.0], [hi, lo, 0.0], [lo, lo, 0.0]]
        )


def build_layout(spec: MarkerSpec) -> MarkerLayout:
    """Compute the cell role grid and the 3D geometry of the tracked edges."""
    T = spec.total_side
    rr, cc = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    layer = np.minimum(np.minimum(rr, cc), np.minimum(T - 1 - rr, T - 1 - cc))

    roles = np.full((T, T), CellRole.PAYLOAD, dtype=np.int8)
    roles[layer == 0] = CellRole.EXTERIOR_BLACK
    roles[layer == 1] = CellRole.EXTERIOR_WHITE
    roles[layer == 2] = CellRole.EXTERIOR_BLACK

    # Interior locator ring (layer 3): solid along the left column and bottom
    # row; dashed along the top row and right column.
    ring = layer == 3
    solid = ring & ((cc == 3) | (rr == T - 4))
    dashed = ring & ~solid
    roles[solid] = CellRole.INTERIOR_SOLID
    roles[dashed] = CellRole.INTERIOR_DASHED

    # Dash phase: white at the corner each dashed side shares with a solid
    # side (top side starts at the left, right side starts at the bottom).
    dash_lit = np.zeros((T, T), dtype=bool)
    top = dashed & (rr == 3)
    right = dashed & (cc == T - 4)
    dash_lit[top] = (cc[top] - 3) % 2 == 0
    dash_lit[right] = (T - 4 - rr[right]) % 2 == 0

    cs = spec.cell_size_m

    def corner(r, c):
        return np.array([c * cs, r * cs, 0.0])

    # White ring boundaries: outer square through cell coordinate 1..T-1,
    # inner square through 2..T-2. Four edges each, top/right/bottom/left.
    def square_edges(a, b):
        tl, tr = corner(a, a), corner(a, b)
        br, bl = corner(b, b), corner(b, a)
        return [(tl, tr), (tr, br), (br, bl), (bl, tl)]

    outer = square_edges(1, T - 1)
    inner = square_edges(2, T - 2)
    edges = np.array(outer + inner)

    ring_outer = np.array([corner(1, 1), corner(1, T - 1), corner(T - 1, T - 1), corner(T - 1, 1)])
    ring_inner = np.array([corner(2, 2), corner(2, T - 2), corner(T - 2, T - 2), corner(T - 2, 2)])
    return MarkerLayout(spec, roles, dash_lit, edges, ring_outer, ring_inner)


def render_data_frame(layout: MarkerLayout, payload) -> np.ndarray:
    """Cell bitmap (0/1 uint8) of a data frame carrying the given payload."""
    bits = np.asarray(payload.bits if hasattr(payload, "bits") else payload, dtype=np.uint8)
    n = layout.n
    if bits.shape != (n, n):
        raise ValueError(f"payload must be {n}x{n}, got {bits.shape}")
    frame = np.zeros((layout.total, layout.total), dtype=np.uint8)
    frame[layout.roles == CellRole.EXTERIOR_WHITE] = 1
    frame[layout.roles == CellRole.INTERIOR_SOLID] = 1
    frame[layout.dash_lit] = 1
    frame[layout.payload_slice()] = bits
    return frame


def render_blank_frame(layout: MarkerLayout) -> np.ndarray:
    """Cell bitmap of a blank frame: exterior locator only."""
    frame = np.zeros((layout.total, layout.total), dtype=np.uint8)
    frame[layout.roles == CellRole.EXTERIOR_WHITE] = 1
    return frame


@dataclass(frozen=True)
class FrameEntry:
    index: int               # position in the video sequence
    data_index: int | None   # m for data frames, None for blanks
    display_time_us: int
    kind: str                # DATA or BLANK
    payload: object | None   # BitMatrix for data frames


@dataclass(frozen=True)
class FrameSchedule:
    entries: tuple
    video_rate_hz: float
    data_rate_hz: float

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def span_us(self) -> int:
        """Time until one video period after the last scheduled frame."""
        return self.entries[-1].display_time_us + round(1e6 / self.video_rate_hz)

    def frame_at(self, time_us: float) -> FrameEntry | None:
        """Entry on display at the given time (ignoring scan progress)."""
        idx = int(np.floor(time_us * self.video_rate_hz / 1e6))
        if idx < 0:
            return None
        return self.entries[idx % len(self.entries)] if self.entries else None


def schedule_frames(layout: MarkerLayout, payload_frames, spec: MarkerSpec) -> FrameSchedule:
    """Interleave payload frames with blanks at the video rate, data first.

    Data frame m is displayed at offset m / f_d; each entry's display time is
    rounded to integer microseconds.
    """
    if not payload_frames:
        raise ValueError("need at least one payload frame")
    entries = []
    for m, payload in enumerate(payload_frames):
        for half, kind in enumerate((DATA, BLANK)):
            i = 2 * m + half
            entries.append(
                FrameEntry(
                    index=i,
                    data_index=m if kind == DATA else None,
                    display_time_us=round(i * 1e6 / spec.video_rate_hz),
                    kind=kind,
                    payload=payload if kind == DATA else None,
                )
            )
    return FrameSchedule(tuple(entries), spec.video_rate_hz, spec.data_rate_hz)


def save_pgm(path, frame: np.ndarray, pixels_per_cell: int = 10) -> None:
    """Write a cell bitmap as a binary PGM, 0/255, scaled for inspection."""
    img = np.where(np.kron(frame, np.ones((pixels_per_cell, pixels_per_cell), dtype=np.uint8)) > 0, 255, 0)
    img = img.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    width, height, _ = fields
    pos += 1
    img = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    return img.reshape(height, width)
