"""Event stream primitives: the event record, the Surface of Active Events,
and the two stream pre-filters (refractory and spatiotemporal neighborhood)
every downstream stage runs on.

Streams are numpy structured arrays (dtype ``EVENT_DTYPE``) ordered by
nondecreasing timestamp. Timestamps are integer microseconds throughout;
floats would drift over long recordings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

EVENT_DTYPE = np.dtype([("t", np.int64), ("x", np.int16), ("y", np.int16), ("p", np.int8)])


class Event(NamedTuple):
    """A single sensor sample. Polarity is +1 (brighter) or -1 (darker)."""

    x: int
    y: int
    t: int
    pol: int


class OrderingError(ValueError):
    """Raised when a stream violates the nondecreasing-timestamp contract."""


@dataclass(frozen=True)
class FilterConfig:
    """Pre-filter constants.

    The neighborhood window is a (pixels, pixels, microseconds) space-time
    box; ``neighborhood_min_support`` is the number of *other* events that
    must fall inside it for an event to survive.
    """

    refractory_interval_us: int = 1000
    neighborhood_window: tuple[int, int, int] = (3, 3, 10000)
    neighborhood_min_support: int = 3

    def __post_init__(self):
        if self.refractory_interval_us <= 0:
            raise ValueError("refractory interval must be positive")
        if any(v <= 0 for v in self.neighborhood_window):
            raise ValueError("neighborhood window must be positive")
        if self.neighborhood_min_support <= 0:
            raise ValueError("min support must be positive")


def events_array(t, x, y, p) -> np.ndarray:
    """Assemble an event stream from parallel sequences."""
    t = np.asarray(t, dtype=np.int64)
    out = np.empty(t.shape, dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = np.asarray(x, dtype=np.int16)
    out["y"] = np.asarray(y, dtype=np.int16)
    out["p"] = np.asarray(p, dtype=np.int8)
    return out


def empty_events() -> np.ndarray:
    return np.empty(0, dtype=EVENT_DTYPE)


def concat_sorted(chunks) -> np.ndarray:
    """Concatenate event chunks and sort by timestamp (stable)."""
    if not chunks:
        return empty_events()
    ev = np.concatenate([np.asarray(c, dtype=EVENT_DTYPE) for c in chunks])
    order = np.argsort(ev["t"], kind="stable")
    return ev[order]


def _check_ordered(events: np.ndarray) -> None:
    if len(events) > 1 and np.any(np.diff(events["t"]) < 0):
        raise OrderingError("event stream is not ordered by timestamp")


# ---------------------------------------------------------------------------
# Surface of Active Events


class SurfaceOfActiveEvents:
    """Per-pixel latest-event-timestamp map, kept separately per polarity.

    A cell value of 0 means the pixel never fired; genuine t=0 events are
    stored as 1 so they stay distinguishable from the sentinel.
    """

    def __init__(self, width: int, height: int):
        self.width = int(width)
        self.height = int(height)
        self.pos = np.zeros((self.height, self.width), dtype=np.int64)
        self.neg = np.zeros((self.height, self.width), dtype=np.int64)

    def plane(self, polarity: int) -> np.ndarray:
        return self.pos if polarity > 0 else self.neg

    @property
    def merged(self) -> np.ndarray:
        """Latest timestamp regardless of polarity."""
        return np.maximum(self.pos, self.neg)

    def update(self, events: np.ndarray) -> "SurfaceOfActiveEvents":
        """Fold a (time-ordered or not) batch of events into the surface."""
        ev = np.asarray(events, dtype=EVENT_DTYPE)
        if len(ev) == 0:
            return self
        x = ev["x"].astype(np.intp)
        y = ev["y"].astype(np.intp)
        if x.min() < 0 or y.min() < 0 or x.max() >= self.width or y.max() >= self.height:
            raise IndexError("event outside sensor bounds")
        t = np.maximum(ev["t"], 1)
        pos_mask = ev["p"] > 0
        np.maximum.at(self.pos, (y[pos_mask], x[pos_mask]), t[pos_mask])
        np.maximum.at(self.neg, (y[~pos_mask], x[~pos_mask]), t[~pos_mask])
        return self

    def copy(self) -> "SurfaceOfActiveEvents":
        out = SurfaceOfActiveEvents(self.width, self.height)
        out.pos = self.pos.copy()
        out.neg = self.neg.copy()
        return out


def sae_update(sae: SurfaceOfActiveEvents, event: Event) -> SurfaceOfActiveEvents:
    """Fold one event into the surface; stale timestamps are a no-op."""
    if not (0 <= event.x < sae.width and 0 <= event.y < sae.height):
        raise IndexError(f"event at ({event.x}, {event.y}) outside sensor bounds")
    plane = sae.plane(event.pol)
    plane[event.y, event.x] = max(plane[event.y, event.x], max(int(event.t), 1))
    return sae


def normalize_sae(sae, tau: float, dt: float, polarity: int = 1) -> np.ndarray:
    """Map timestamps inside [tau - dt, tau + dt] linearly onto [0, 1].

    Pixels whose latest timestamp falls outside the window (or that never
    fired) map to 0. Accepts either a raw timestamp plane or a
    SurfaceOfActiveEvents, in which case the plane of ``polarity`` is used.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    plane = sae.plane(polarity) if isinstance(sae, SurfaceOfActiveEvents) else np.asarray(sae)
    lo = tau - dt
    inside = (plane >= lo) & (plane <= tau + dt) & (plane > 0)
    out = np.zeros(plane.shape, dtype=np.float64)
    out[inside] = (plane[inside] - lo) / (2.0 * dt)
    return out


# ---------------------------------------------------------------------------
# Pre-filters


@njit(cache=True)
def _refractory_keep(pix_sorted, t_sorted, interval):
    n = len(pix_sorted)
    keep = np.zeros(n, dtype=np.bool_)
    i = 0
    while i < n:
        j = i
        last_kept = -np.int64(1) << 62
        while j < n and pix_sorted[j] == pix_sorted[i]:
            if t_sorted[j] - last_kept >= interval:
                keep[j] = True
                last_kept = t_sorted[j]
            j += 1
        i = j
    return keep


def refractory_filter(events: np.ndarray, interval_us: int) -> np.ndarray:
    """Keep an event only if >= interval has passed since the previous kept
    event at the same pixel. Stream order is preserved.
    """
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    _check_ordered(ev)
    if len(ev) == 0:
        return ev
    pix = ev["y"].astype(np.int64) * 65536 + ev["x"].astype(np.int64)
    order = np.lexsort((np.arange(len(ev)), pix))  # stable within pixel = time order
    keep_sorted = _refractory_keep(pix[order], ev["t"][order], np.int64(interval_us))
    keep = np.zeros(len(ev), dtype=bool)
    keep[order] = keep_sorted
    return ev[keep]


@njit(cache=True)
def _neighborhood_keep(x, y, t, width, height, rx, ry, dt_back, min_support):
    # Single time-ordered pass. Each pixel stores its (min_support + 1) most
    # recent timestamps; per-neighbor counts therefore saturate high enough
    # that the summed support is exact with respect to the >= min_support
    # decision. Equal-timestamp groups are inserted before being evaluated so
    # that same-timestamp events support each other regardless of file order.
    n = len(x)
    k = min_support + 1
    recent = np.full((height * width, k), np.int64(-1) << 62, dtype=np.int64)
    wpos = np.zeros(height * width, dtype=np.int8)
    keep = np.zeros(n, dtype=np.bool_)
    i = 0
    while i < n:
        j = i
        while j < n and t[j] == t[i]:
            pid = y[j] * width + x[j]
            recent[pid, wpos[pid]] = t[j]
            wpos[pid] = (wpos[pid] + 1) % k
            j += 1
        cutoff = t[i] - dt_back
        for e in range(i, j):
            support = -1  # the event itself is stored and inside its own box
            for dy in range(-ry, ry + 1):
                ny = y[e] + dy
                if ny < 0 or ny >= height:
                    continue
                for dx in range(-rx, rx + 1):
                    nx = x[e] + dx
                    if nx < 0 or nx >= width:
                        continue
                    row = recent[ny * width + nx]
                    for s in range(k):
                        if row[s] >= cutoff:
                            support += 1
            if support >= min_support:
                keep[e] = True
        i = j
    return keep


def neighborhood_filter(
    events: np.ndarray,
    window: tuple[int, int, int] = (3, 3, 10000),
    min_support: int = 3,
) -> np.ndarray:
    """Keep an event iff at least ``min_support`` other input events fall in
    the space-time box centered on it spatially and ending at its timestamp.
    """
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    _check_ordered(ev)
    if len(ev) == 0:
        return ev
    wx, wy, wt = window
    width = int(ev["x"].max()) + 1
    height = int(ev["y"].max()) + 1
    keep = _neighborhood_keep(
        ev["x"].astype(np.int32),
        ev["y"].astype(np.int32),
        ev["t"],
        np.int32(width),
        np.int32(height),
        np.int32(wx // 2),
        np.int32(wy // 2),
        np.int64(wt),
        np.int64(min_support),
    )
    return ev[keep]


def prefilter(events: np.ndarray, config: FilterConfig | None = None) -> np.ndarray:
    """Refractory filter followed by the neighborhood filter."""
    cfg = config or FilterConfig()
    out = refractory_filter(events, cfg.refractory_interval_us)
    return neighborhood_filter(out, cfg.neighborhood_window, cfg.neighborhood_min_support)


# ---------------------------------------------------------------------------
# Stream file format: CSV lines `t_us,x,y,p` with p in {0,1}, optional
# '#'-prefixed headers, LF terminated.


def save_events_csv(path, events: np.ndarray, header: str | None = None) -> None:
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    cols = np.empty((len(ev), 4), dtype=np.int64)
    cols[:, 0] = ev["t"]
    cols[:, 1] = ev["x"]
    cols[:, 2] = ev["y"]
    cols[:, 3] = ev["p"] > 0
    with open(path, "w", newline="\n") as f:
        if header:
            for line in header.splitlines():
                f.write(f"# {line}\n")
        np.savetxt(f, cols, fmt="%d", delimiter=",")


def load_events_csv(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t, x, y, p = line.split(",")
            rows.append((int(t), int(x), int(y), 1 if int(p) > 0 else -1))
    ev = np.array(rows, dtype=EVENT_DTYPE) if rows else empty_events()
    _check_ordered(ev)
    return ev
