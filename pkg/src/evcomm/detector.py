"""Bootstrap localization of the marker in space and time.

Temporal detection looks for per-pixel event triplets of alternating
polarity whose duration matches the data-frame period, accumulates their
Gaussian weights into a heatmap, and takes the largest thresholded region
as the ROI. The data-frame phase comes from the DFT of the positive-event
counts inside the ROI: the spectral bin at the data rate yields the burst
centroid (after a half-bin correction for histogram quantization), a folded
circular mean refines it, and the refresh onset is the centroid minus half
the scan duration. This convention is pinned by the brute-force phase-scan
oracle in the test suite.

Spatial detection binarizes the normalized surface of active events around
one data-frame refresh, extracts convex candidate quads, and identifies the
interior locator by its solid-L signature: the two solid ring sides sample
as continuous runs, the dashed sides as broken ones. Corner positions are
refined by robust line fits along the quad sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from numba import njit

from .events import EVENT_DTYPE, SurfaceOfActiveEvents, normalize_sae
from .geometry import CameraIntrinsics, Pose, homography_from_points, pose_from_plane_homography
from .marker import MarkerLayout


class DetectionError(RuntimeError):
    pass


class InsufficientDataError(DetectionError):
    pass


class NoMarkerError(DetectionError):
    pass


class LowConfidenceError(DetectionError):
    pass


class DetectionFailedError(DetectionError):
    pass


class AmbiguousDetectionError(DetectionError):
    def __init__(self, candidates):
        super().__init__(f"{len(candidates)} rival marker candidates")
        self.candidates = candidates


@dataclass(frozen=True)
class DetectionConfig:
    """Detector constants. ``payload_side`` is the shared protocol constant
    the receiver needs to interpret ring geometry; everything else has
    conservative defaults.
    """

    data_rate_hz: float = 30.0
    payload_side: int = 16
    window_us: int = 1_000_000
    triplet_sigma_us: float | None = None       # default 0.1 / f_d
    heatmap_threshold: float = 0.5              # fraction of max weight
    sample_count: int | None = None             # default 4 * f_d * window
    min_polygon_side_px: float = 50.0
    perpendicularity_tol_deg: float = 15.0
    side_ratio_tol: float = 0.3
    scan_duration_us: int = 16667
    sae_half_window_us: float | None = None     # default 0.2/f_d + scan/2
    phase_confidence_ratio: float = 3.0

    @property
    def period_us(self) -> float:
        return 1e6 / self.data_rate_hz

    @property
    def sigma_us(self) -> float:
        return self.triplet_sigma_us if self.triplet_sigma_us is not None else 0.1 * self.period_us

    @property
    def sae_dt_us(self) -> float:
        # Wide enough for a full progressive scan; reduces to 0.2 of the
        # period for an instantaneous refresh.
        if self.sae_half_window_us is not None:
            return self.sae_half_window_us
        return 0.2 * self.period_us + self.scan_duration_us / 2.0


@dataclass
class FrameClock:
    """Refresh timing of the data frames: tau_m = tau_0 + m / f_d."""

    tau0_us: float
    data_rate_hz: float
    next_index: int = 0

    def frame_time(self, m: int) -> float:
        return self.tau0_us + m * 1e6 / self.data_rate_hz

    def index_at(self, time_us: float) -> int:
        """Index of the nearest data frame refresh."""
        return round((time_us - self.tau0_us) * self.data_rate_hz / 1e6)


@dataclass
class MarkerDetection:
    roi: tuple                 # (x, y, w, h) pixel rectangle
    quad: np.ndarray           # (4, 2) subpixel corners, L corner first
    orientation_deg: int      # multiple of 90: marker roll in the image
    clock: FrameClock
    sae_time_us: float = 0.0   # when the detection snapshot is valid


# ---------------------------------------------------------------------------
# Temporal detection


@njit(cache=True)
def _accumulate_triplets(pix, t, p, period_us, sigma_us, out):
    n = len(pix)
    i = 0
    while i < n:
        j = i
        while j < n and pix[j] == pix[i]:
            j += 1
        for e in range(i, j - 2):
            if p[e + 1] != p[e] and p[e + 2] == p[e]:
                d = t[e + 2] - t[e]
                z = (d - period_us) / sigma_us
                if abs(z) < 8.0:
                    out[pix[e]] += math.exp(-0.5 * z * z)
        i = j


def triplet_heatmap(events: np.ndarray, width: int, height: int, config: DetectionConfig) -> np.ndarray:
    """Per-pixel accumulated weight of period-matched alternating triplets."""
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    if len(ev) == 0 or ev["t"][-1] - ev["t"][0] < 2 * config.period_us:
        raise InsufficientDataError("stream shorter than two data periods")
    pix = ev["y"].astype(np.int64) * width + ev["x"].astype(np.int64)
    order = np.lexsort((np.arange(len(ev)), pix))
    out = np.zeros(width * height, dtype=np.float64)
    _accumulate_triplets(pix[order], ev["t"][order], ev["p"][order], config.period_us, config.sigma_us, out)
    return out.reshape(height, width)


def extract_roi(heatmap: np.ndarray, config: DetectionConfig) -> tuple:
    """Bounding rectangle of the largest connected above-threshold region."""
    peak = float(heatmap.max())
    if peak <= 0:
        raise NoMarkerError("heatmap is empty")
    mask = (heatmap >= config.heatmap_threshold * peak).astype(np.uint8)
    contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
    best, best_area = None, 0.0
    for c in contours:
        x, y, w, h = cv2.boundingRect(c)
        area = float(w) * float(h)
        if area > best_area:
            best, best_area = (x, y, w, h), area
    min_area = config.min_polygon_side_px**2
    if best is None or best_area < min_area:
        raise NoMarkerError("no above-threshold region of sufficient size")
    return best


def _events_in_roi(events: np.ndarray, roi) -> np.ndarray:
    x, y, w, h = roi
    sel = (
        (events["x"] >= x)
        & (events["x"] < x + w)
        & (events["y"] >= y)
        & (events["y"] < y + h)
    )
    return events[sel]


def _folded_centroid(times: np.ndarray, center: float, period: float, halfspan: float) -> float:
    d = (times - center + period / 2.0) % period - period / 2.0
    sel = np.abs(d) <= halfspan
    if not np.any(sel):
        return center
    return center + float(np.mean(d[sel]))


def estimate_phase(events: np.ndarray, roi, config: DetectionConfig) -> FrameClock:
    """Recover the data-frame refresh clock from positive-event periodicity."""
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    pos = _events_in_roi(ev[ev["p"] > 0], roi)
    if len(pos) == 0:
        raise InsufficientDataError("no positive events inside the ROI")
    t0 = int(pos["t"][0])
    span = int(pos["t"][-1]) - t0
    period = config.period_us
    cycles = int(min(span, config.window_us) / period)
    if cycles < 2:
        raise InsufficientDataError("analysis window shorter than two data periods")
    window = cycles * period

    n_bins = config.sample_count or int(round(4 * cycles))
    if n_bins < 2 * cycles:
        raise ValueError("sample count violates the Nyquist bound")
    inside = pos["t"] <= t0 + window
    counts, _ = np.histogram(pos["t"][inside], bins=np.linspace(t0, t0 + window, n_bins + 1))

    k = cycles  # bin of the data rate for a whole number of cycles
    phases = np.exp(-2j * np.pi * k * np.arange(n_bins) / n_bins)
    Xk = complex(np.sum(counts * phases))
    spectrum = np.abs(np.fft.rfft(counts))
    others = np.delete(spectrum[1:], k - 1)
    floor = np.median(others) if len(others) else 0.0
    if abs(Xk) < config.phase_confidence_ratio * max(floor, 1e-12):
        raise LowConfidenceError("no dominant spectral component at the data rate")

    bin_us = window / n_bins
    centroid = ((2 * np.pi - np.angle(Xk)) % (2 * np.pi)) / (2 * np.pi) * period + bin_us / 2.0
    centroid = t0 + (centroid % period)
    for _ in range(2):
        centroid = _folded_centroid(
            pos["t"].astype(np.float64), centroid, period, 0.55 * config.scan_duration_us
        )
    onset = centroid - config.scan_duration_us / 2.0
    tau0 = t0 + ((onset - t0) % period)
    return FrameClock(tau0_us=float(tau0), data_rate_hz=config.data_rate_hz)


# ---------------------------------------------------------------------------
# Spatial detection


def _fit_line(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, vt[0]


def _intersect(p1, d1, p2, d2) -> np.ndarray:
    A = np.column_stack([d1, -d2])
    if abs(np.linalg.det(A)) < 1e-9:
        raise DetectionFailedError("parallel quad sides")
    s = np.linalg.solve(A, p2 - p1)
    return p1 + s[0] * d1


def _refine_quad(contour_points: np.ndarray, quad: np.ndarray, n: int) -> np.ndarray:
    """Subpixel corners from outer-envelope line fits along each quad side.

    The blob boundary along a dashed ring side alternates between the true
    outer line and one-cell indentations (and the never-lit dash-dash corner
    is clipped diagonally), so a plain fit drifts inward. Only the outermost
    populated band of boundary points per side belongs to the ring line;
    fitting that band and intersecting adjacent lines recovers the corners.
    """
    for _ in range(3):
        center = quad.mean(axis=0)
        lines = []
        for i in range(4):
            a, b = quad[i], quad[(i + 1) % 4]
            ab = b - a
            length = np.linalg.norm(ab)
            cell = length / (n + 2)
            rel = contour_points - a
            tproj = rel @ ab / (length**2)
            signed = (ab[0] * rel[:, 1] - ab[1] * rel[:, 0]) / length
            inward = np.sign(ab[0] * (center - a)[1] - ab[1] * (center - a)[0])
            d_out = -signed * inward  # positive = outside the quad
            near = (tproj > 0.04) & (tproj < 0.96) & (d_out > -(cell + 3.0)) & (d_out < cell)
            pts = contour_points[near]
            if len(pts) < 4:
                lines.append((a, ab / length))
                continue
            envelope = np.percentile(d_out[near], 95)
            band = pts[np.abs(d_out[near] - envelope) <= 1.8]
            lines.append(_fit_line(band) if len(band) >= 4 else (a, ab / length))
        # corner j joins side j-1 and side j
        quad = np.array([_intersect(*lines[(j - 1) % 4], *lines[j]) for j in range(4)])
    return quad


def _shoelace(quad: np.ndarray) -> float:
    x, y = quad[:, 0], quad[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) / 2.0)


def _quad_criteria_ok(quad: np.ndarray, config: DetectionConfig) -> bool:
    sides = np.roll(quad, -1, axis=0) - quad
    lengths = np.linalg.norm(sides, axis=1)
    if lengths.min() <= 0:
        return False
    if cv2.contourArea(quad.astype(np.float32)) < config.min_polygon_side_px**2:
        return False
    if lengths.max() / lengths.min() > 1.0 + config.side_ratio_tol:
        return False
    for i in range(4):
        a = sides[i] / lengths[i]
        b = sides[(i + 1) % 4] / lengths[(i + 1) % 4]
        interior = math.degrees(math.acos(np.clip(np.dot(a, -b), -1, 1)))
        if abs(interior - 90.0) > config.perpendicularity_tol_deg:
            return False
    return True


def _side_lit_fraction(mask: np.ndarray, quad: np.ndarray, n: int) -> np.ndarray:
    """Lit fraction of the one-cell ring band just inside each quad side."""
    h, w = mask.shape
    center = quad.mean(axis=0)
    fractions = np.empty(4)
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        cells = n + 2
        inward = center - (a + b) / 2.0
        inward /= np.linalg.norm(inward)
        offset = np.linalg.norm(b - a) / cells * 0.5
        ts = (np.arange(2 * cells) + 0.5) / (2 * cells)
        pts = a + ts[:, None] * (b - a) + inward * offset
        xs = np.clip(np.round(pts[:, 0]).astype(int), 0, w - 1)
        ys = np.clip(np.round(pts[:, 1]).astype(int), 0, h - 1)
        fractions[i] = float(np.mean(mask[ys, xs] > 0))
    return fractions


def detect_marker_polygon(norm_sae: np.ndarray, config: DetectionConfig) -> tuple[np.ndarray, int]:
    """Find the interior locator quad and the marker roll in the image.

    Returns (quad, orientation). The quad is ordered from the solid-solid
    ("L") corner onward along the solid bottom edge; orientation is the
    image-plane roll of the marker in multiples of 90 degrees.
    """
    mask = (norm_sae > 0).astype(np.uint8)
    contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    candidates = []
    for contour in contours:
        if len(contour) < 4:
            continue
        dense = contour.reshape(-1, 2).astype(np.float64)
        hull = cv2.convexHull(contour).reshape(-1, 2).astype(np.float64)
        if cv2.contourArea(hull.astype(np.float32)) < config.min_polygon_side_px**2:
            continue
        perimeter = cv2.arcLength(hull.astype(np.float32), True)
        quad = None
        for eps_frac in (0.02, 0.04, 0.06, 0.09):
            approx = cv2.approxPolyDP(hull.astype(np.float32), eps_frac * perimeter, True)
            if len(approx) == 4:
                quad = approx.reshape(4, 2).astype(np.float64)
                break
            if len(approx) < 4:
                break
        if quad is None:
            continue
        quad = _refine_quad(dense, quad, config.payload_side)
        if not _quad_criteria_ok(quad, config):
            continue
        if _shoelace(quad) > 0:  # normalize winding (y-down image coords)
            quad = quad[::-1]

        fractions = _side_lit_fraction(mask, quad, config.payload_side)
        pair_sums = np.array([fractions[(i - 1) % 4] + fractions[i] for i in range(4)])
        li = int(np.argmax(pair_sums))
        solid = [fractions[(li - 1) % 4], fractions[li]]
        dashed = [fractions[(li + 1) % 4], fractions[(li + 2) % 4]]
        if min(solid) < 0.78 or max(dashed) > 0.85 or min(solid) - max(dashed) < 0.1:
            continue  # no L signature: not the interior locator
        quad = np.roll(quad, -li, axis=0)
        candidates.append((quad, float(min(solid) - max(dashed))))

    if not candidates:
        raise DetectionFailedError("no candidate polygon passed the marker criteria")
    if len(candidates) > 1:
        raise AmbiguousDetectionError([c[0] for c in candidates])
    quad = candidates[0][0]
    first_side = quad[1] - quad[0]
    orientation = round(math.degrees(math.atan2(first_side[1], first_side[0])) / 90.0) * 90 % 360
    return quad, int(orientation)


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class DetectionResult:
    detection: MarkerDetection
    pose: Pose


def pose_from_detection(quad: np.ndarray, layout: MarkerLayout, K: CameraIntrinsics) -> Pose:
    """Pose from the interior-locator quad via the plane homography."""
    marker_pts = layout.interior_outer_corners_m()[:, :2]
    H = homography_from_points(marker_pts, quad)
    return pose_from_plane_homography(K, H)


def detect(
    events: np.ndarray,
    K: CameraIntrinsics,
    layout: MarkerLayout,
    config: DetectionConfig,
) -> DetectionResult:
    """Run temporal then spatial detection on a pre-filtered event window."""
    ev = np.asarray(events, dtype=EVENT_DTYPE)
    if len(ev) == 0:
        raise InsufficientDataError("empty stream")
    window_end = int(ev["t"][0]) + config.window_us
    win = ev[ev["t"] <= window_end]

    heatmap = triplet_heatmap(win, K.width, K.height, config)
    roi = extract_roi(heatmap, config)
    clock = estimate_phase(win, roi, config)

    # Snapshot the union of the positive SAEs of every data frame inside the
    # window: a single frame's random payload need not form one connected
    # blob under an ideal (blur-free) sensor, but cells lit in any frame and
    # the always-lit ring sides give the union a stable outline, while the
    # static exterior ring stays dark. The latest complete refresh anchors
    # the snapshot time handed to the tracker.
    dt = config.sae_dt_us
    scan = config.scan_duration_us
    last_t = int(win["t"][-1])
    m = math.floor((last_t - scan / 2.0 - dt - clock.tau0_us) * config.data_rate_hz / 1e6)
    if m < 0:
        raise InsufficientDataError("no complete data frame inside the analysis window")
    hi = clock.frame_time(m) + scan / 2.0 + dt
    # Skip the first refresh: turning the screen on from black lights the
    # otherwise-static exterior ring once, which would fold into the union.
    lo = max(float(win["t"][0]), clock.frame_time(1) - 0.2 * config.period_us)
    if hi <= lo:
        raise InsufficientDataError("analysis window too short for a clean snapshot")
    sel = win[(win["t"] >= lo) & (win["t"] <= hi) & (win["p"] > 0)]
    sae = SurfaceOfActiveEvents(K.width, K.height).update(sel)
    norm = normalize_sae(sae, (lo + hi) / 2.0, (hi - lo) / 2.0, polarity=1)
    center = clock.frame_time(m) + scan / 2.0

    quad, orientation = detect_marker_polygon(norm, config)
    pose = pose_from_detection(quad, layout, K)
    detection = MarkerDetection(
        roi=roi,
        quad=quad,
        orientation_deg=orientation,
        clock=clock,
        sae_time_us=center + dt,
    )
    return DetectionResult(detection, pose)
