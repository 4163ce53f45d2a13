"""Trajectory-to-image conversion for the correction-flow refinement stage.

Long trajectories split into overlapping segments, each rendered as a
6-channel 250x250 sample: a floorplan crop stacked on a time-colored
scatter plot of the segment. Flow fields predicted on those samples come
back as per-pixel displacements restricted to trajectory pixels; they are
read per frame, converted to world meters, and blended across overlapping
segments with Gaussian time weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .geo import FloorplanRaster, GeoRegistration, pixel_delta_to_world, world_to_pixel
from .trajectory import PositionSeries

WINDOW_PX = 250
DISK_RADIUS_PX = 3
SEGMENT_MAX_SPAN_S = 240.0
FLOW_FALLBACK_RADIUS_PX = 3
# tolerance when validating that frame pixels stay inside the crop window
_EDGE_EPS = 1e-6


@dataclass
class SegmentSample:
    """One CNN-ready segment: 6-channel image plus its frame-to-pixel map."""

    image: np.ndarray  # (6, 250, 250) float32 in [0, 1]; 0:3 floorplan, 3:6 trajectory
    crop_offset: np.ndarray  # (2,) int, pixel coords of the crop origin in the plan
    frame_range: tuple[int, int]  # inclusive [first, last] frame indices
    frame_pixels: np.ndarray  # (L, 2) continuous crop-local pixel coords
    span: float  # seconds covered by the segment

    def __post_init__(self):
        if self.image.shape != (6, WINDOW_PX, WINDOW_PX):
            raise ValueError(f"sample image must be (6, {WINDOW_PX}, {WINDOW_PX})")
        first, last = self.frame_range
        if len(self.frame_pixels) != last - first + 1:
            raise ValueError("frame_pixels must cover the frame range")


@dataclass
class FlowField:
    """Per-pixel 2D displacement (pixels), valid only where mask is true."""

    flow: np.ndarray  # (2, 250, 250) float32
    mask: np.ndarray  # (250, 250) bool

    def __post_init__(self):
        if self.flow.shape != (2, WINDOW_PX, WINDOW_PX):
            raise ValueError(f"flow must be (2, {WINDOW_PX}, {WINDOW_PX})")
        if self.mask.shape != (WINDOW_PX, WINDOW_PX):
            raise ValueError(f"mask must be ({WINDOW_PX}, {WINDOW_PX})")


def disk_stencil(radius: int = DISK_RADIUS_PX) -> np.ndarray:
    """Integer offsets of a filled disk, sorted by (distance, dy, dx)."""
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    inside = dx * dx + dy * dy <= r * r
    offs = np.column_stack([dx[inside], dy[inside]])
    d2 = offs[:, 0] ** 2 + offs[:, 1] ** 2
    order = np.lexsort((offs[:, 0], offs[:, 1], d2))
    return offs[order]


_STENCIL = disk_stencil()


def rainbow_colors(t_norm: np.ndarray) -> np.ndarray:
    """Time colormap: hue sweeps 240 degrees (blue) to 0 (red), full S/V."""
    t = np.clip(np.asarray(t_norm, dtype=float), 0.0, 1.0)
    hsv = np.stack([(240.0 / 360.0) * (1.0 - t), np.ones_like(t), np.ones_like(t)], axis=-1)
    return hsv_to_rgb(hsv)


def paint_owner_map(centers_px: np.ndarray, size: int = WINDOW_PX,
                    radius: int = DISK_RADIUS_PX) -> np.ndarray:
    """Paint radius-r disks at each center in order; later frames overwrite.

    Returns an int32 (size, size) map of the last frame index whose disk
    covers each pixel, -1 where unpainted. Out-of-window pixels are clipped.
    """
    owner = np.full((size, size), -1, dtype=np.int32)
    if len(centers_px) == 0:
        return owner
    stencil = _STENCIL if radius == DISK_RADIUS_PX else disk_stencil(radius)
    centers = np.rint(np.asarray(centers_px, dtype=float)).astype(np.int64)
    pts = centers[:, None, :] + stencil[None, :, :]  # (N, K, 2)
    frame_ids = np.broadcast_to(
        np.arange(len(centers), dtype=np.int32)[:, None], pts.shape[:2])
    xs = pts[..., 0].ravel()
    ys = pts[..., 1].ravel()
    ids = frame_ids.ravel()
    ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
    # flat assignment runs in frame order, so the last (latest) frame wins
    owner.ravel()[ys[ok] * size + xs[ok]] = ids[ok]
    return owner


def nearest_owner_map(centers_px: np.ndarray, size: int = WINDOW_PX,
                      radius: int = DISK_RADIUS_PX) -> np.ndarray:
    """Like :func:`paint_owner_map`, but each disk pixel belongs to the frame
    whose continuous center is nearest (ties to the later frame).

    Flow fields built on this ownership let a frame read back its own
    displacement at its rounded center, instead of a later overlapping
    frame's.
    """
    owner = np.full((size, size), -1, dtype=np.int32)
    if len(centers_px) == 0:
        return owner
    stencil = _STENCIL if radius == DISK_RADIUS_PX else disk_stencil(radius)
    centers = np.asarray(centers_px, dtype=float)
    pts = np.rint(centers).astype(np.int64)[:, None, :] + stencil[None, :, :]
    d2 = np.sum((pts - centers[:, None, :]) ** 2, axis=2)
    frame_ids = np.broadcast_to(
        np.arange(len(centers), dtype=np.int64)[:, None], pts.shape[:2])
    xs = pts[..., 0].ravel()
    ys = pts[..., 1].ravel()
    ids = frame_ids.ravel()
    dist = d2.ravel()
    ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
    flat = ys[ok] * size + xs[ok]
    ids, dist = ids[ok], dist[ok]
    # per pixel take minimal distance, later frame on ties
    order = np.lexsort((-ids, dist, flat))
    flat, ids = flat[order], ids[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    owner.ravel()[flat[first]] = ids[first]
    return owner


def segment_trajectory(series: PositionSeries, reg: GeoRegistration,
                       max_span_s: float = SEGMENT_MAX_SPAN_S,
                       window_px: int = WINDOW_PX) -> list[tuple[int, int]]:
    """Split a trajectory into overlapping segments.

    Greedy scan: a segment extends until its time span would exceed the cap
    or its pixel bounding box would no longer fit the window, whichever comes
    first. The next segment drops the first three quarters of the previous
    one, keeping the last quarter as overlap.
    """
    if len(series) == 0:
        raise ValueError("cannot segment an empty series")
    px = world_to_pixel(series.positions, reg)
    ts = series.timestamps
    n = len(series)
    segments = []
    first = 0
    while True:
        # candidate frames limited by the time cap
        stop = int(np.searchsorted(ts, ts[first] + max_span_s + 1e-9, side="right"))
        window = px[first:stop]
        extent = (np.maximum.accumulate(window, axis=0)
                  - np.minimum.accumulate(window, axis=0))
        # a window of N pixel cells covers [o, o+N) for integer o, so a
        # continuous extent above N-1 may not be placeable; stay conservative
        limit = window_px - 1
        too_big = (extent[:, 0] > limit) | (extent[:, 1] > limit)
        if np.any(too_big):
            last = first + int(np.argmax(too_big)) - 1
        else:
            last = stop - 1
        last = max(last, first)
        segments.append((first, last))
        if last >= n - 1:
            return segments
        length = last - first + 1
        first += max((3 * length) // 4, 1)


def crop_floorplan(plan: FloorplanRaster, segment_px: np.ndarray,
                   window_px: int = WINDOW_PX) -> tuple[np.ndarray, np.ndarray]:
    """Crop a window centered on the segment's bounding box.

    The window is clamped to the plan borders as far as still containing the
    segment allows; any window area beyond the plan is padded with the
    background color. Returns (rgb uint8, offset).
    """
    seg = np.asarray(segment_px, dtype=float)
    lo = seg.min(axis=0)
    hi = seg.max(axis=0)
    if np.any(hi - lo > window_px + _EDGE_EPS):
        raise ValueError("segment bounding box exceeds the crop window")
    center = (lo + hi) / 2.0
    offset = np.rint(center).astype(int) - window_px // 2
    h, w = plan.rgb.shape[:2]
    for axis, size in ((0, w), (1, h)):
        clamped = np.clip(offset[axis], 0, max(0, size - window_px))
        # containment beats the border clamp when the segment leaves the plan
        clamped = min(clamped, int(np.floor(lo[axis] + _EDGE_EPS)))
        clamped = max(clamped, int(np.ceil(hi[axis] - window_px - _EDGE_EPS)))
        offset[axis] = clamped

    crop = np.empty((window_px, window_px, 3), dtype=np.uint8)
    crop[:] = np.asarray(plan.background_color(), dtype=np.uint8)
    x0, y0 = int(offset[0]), int(offset[1])
    src_x0, src_y0 = max(x0, 0), max(y0, 0)
    src_x1, src_y1 = min(x0 + window_px, w), min(y0 + window_px, h)
    if src_x1 > src_x0 and src_y1 > src_y0:
        crop[src_y0 - y0:src_y1 - y0, src_x0 - x0:src_x1 - x0] = \
            plan.rgb[src_y0:src_y1, src_x0:src_x1]
    return crop, offset


def rasterize_segment(times: np.ndarray, segment_px: np.ndarray,
                      crop_rgb: np.ndarray, crop_offset: np.ndarray,
                      frame_range: tuple[int, int]) -> SegmentSample:
    """Render one segment into a 6-channel sample.

    ``segment_px`` are full-plan pixel coordinates of the segment frames;
    every frame must land inside the crop window.
    """
    local = np.asarray(segment_px, dtype=float) - np.asarray(crop_offset, dtype=float)
    if np.any(local < -_EDGE_EPS) or np.any(local > WINDOW_PX + _EDGE_EPS):
        raise ValueError("segment frame outside the crop window")
    local = np.clip(local, 0.0, WINDOW_PX - _EDGE_EPS)
    span = float(times[-1] - times[0])
    tau = (times - times[0]) / span if span > 0 else np.zeros(len(times))
    colors = rainbow_colors(tau)
    owner = paint_owner_map(local)
    traj_rgb = np.zeros((WINDOW_PX, WINDOW_PX, 3), dtype=np.float32)
    painted = owner >= 0
    traj_rgb[painted] = colors[owner[painted]]

    image = np.empty((6, WINDOW_PX, WINDOW_PX), dtype=np.float32)
    image[0:3] = np.moveaxis(crop_rgb.astype(np.float32) / 255.0, -1, 0)
    image[3:6] = np.moveaxis(traj_rgb, -1, 0)
    return SegmentSample(image=image, crop_offset=np.asarray(crop_offset, dtype=int),
                         frame_range=tuple(frame_range), frame_pixels=local, span=span)


def build_segment_samples(series: PositionSeries, plan: FloorplanRaster
                          ) -> list[SegmentSample]:
    """Segment, crop, and rasterize a full trajectory."""
    reg = plan.registration
    px = world_to_pixel(series.positions, reg)
    samples = []
    for first, last in segment_trajectory(series, reg):
        seg_px = px[first:last + 1]
        crop, offset = crop_floorplan(plan, seg_px)
        samples.append(rasterize_segment(series.timestamps[first:last + 1],
                                         seg_px, crop, offset, (first, last)))
    return samples


def apply_flow(sample: SegmentSample, field: FlowField,
               reg: GeoRegistration) -> np.ndarray:
    """Read the flow at each frame's pixel and convert to world meters.

    Frames whose pixel is unmasked fall back to the nearest masked pixel
    within 3 px (search ordered by distance), else to zero correction.
    """
    centers = np.clip(np.rint(sample.frame_pixels).astype(int), 0, WINDOW_PX - 1)
    xs, ys = centers[:, 0], centers[:, 1]
    deltas_px = np.zeros((len(centers), 2))
    hit = field.mask[ys, xs]
    deltas_px[hit, 0] = field.flow[0, ys[hit], xs[hit]]
    deltas_px[hit, 1] = field.flow[1, ys[hit], xs[hit]]
    for i in np.nonzero(~hit)[0]:
        for dx, dy in _STENCIL[1:]:  # skip the center, already known unmasked
            x, y = xs[i] + dx, ys[i] + dy
            if 0 <= x < WINDOW_PX and 0 <= y < WINDOW_PX and field.mask[y, x]:
                deltas_px[i] = field.flow[:, y, x]
                break
    return pixel_delta_to_world(deltas_px, reg)


def stitch(samples: list[SegmentSample], corrections: list[np.ndarray],
           timestamps: np.ndarray) -> np.ndarray:
    """Blend per-segment corrections into one per-frame correction.

    Weight of segment j at a frame is the normal pdf N(T_j/2, T_j/4)
    evaluated at the frame's time offset into the segment; weights form a
    convex combination per frame.
    """
    if len(samples) != len(corrections):
        raise ValueError("one correction array per segment required")
    n = len(timestamps)
    weight_sum = np.zeros(n)
    weighted = np.zeros((n, 2))
    for sample, corr in zip(samples, corrections):
        first, last = sample.frame_range
        idx = np.arange(first, last + 1)
        if len(corr) != len(idx):
            raise ValueError("correction length must match the segment length")
        tau = timestamps[idx] - timestamps[first]
        span = sample.span
        if span > 0:
            sigma = span / 4.0
            w = np.exp(-0.5 * ((tau - span / 2.0) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
        else:
            w = np.ones(len(idx))
        weight_sum[idx] += w
        weighted[idx] += w[:, None] * corr
    if np.any(weight_sum <= 0):
        missing = int(np.argmax(weight_sum <= 0))
        raise ValueError(f"frame {missing} not covered by any segment")
    return weighted / weight_sum[:, None]


def oracle_flow(sample: SegmentSample, series: PositionSeries,
                gt: PositionSeries, reg: GeoRegistration) -> FlowField:
    """Flow field that moves each trajectory pixel onto the ground truth.

    Per painted pixel the displacement is taken from the most recent frame
    whose disk covers it: ground-truth pixel position minus estimated pixel
    position of that frame.
    """
    first, last = sample.frame_range
    times = series.timestamps[first:last + 1]
    gt_px = world_to_pixel(gt.at(times), reg) - sample.crop_offset
    vectors = (gt_px - sample.frame_pixels).astype(np.float32)
    return flow_from_vectors(sample.frame_pixels, vectors)


def flow_from_vectors(frame_pixels: np.ndarray, vectors: np.ndarray) -> FlowField:
    """Spread per-frame displacement vectors over the trajectory pixels."""
    owner = nearest_owner_map(frame_pixels)
    painted = owner >= 0
    flow = np.zeros((2, WINDOW_PX, WINDOW_PX), dtype=np.float32)
    flow[0][painted] = vectors[owner[painted], 0]
    flow[1][painted] = vectors[owner[painted], 1]
    return FlowField(flow=flow, mask=painted)
