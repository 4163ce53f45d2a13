"""Synthetic data: ground-truth trajectories, inertial-style corruption,
simulated position fixes, and training samples for the flow network.

All generators take explicit seeds and draw from per-purpose generators
(spawned from one root), so outputs are reproducible and independent of
evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .exchange import input_path, sample_meta, target_path, write_flow, write_segment_input
from .geo import FloorplanRaster, world_to_pixel
from .optimizer import FlpFix
from .raster import (
    WINDOW_PX,
    FlowField,
    SegmentSample,
    flow_from_vectors,
    paint_owner_map,
    rainbow_colors,
)
from .trajectory import CorrectionParams, InertialTrajectory, PositionSeries, integrate

FLP_NOISE_STD_M = 5.0
FLP_REPORTED_ACCURACY_M = 10.0
SAMPLE_NOISE_STD_PX = 25.0
SAMPLE_BORDER_MARGIN_PX = 5.0
SAMPLE_REFERENCE_FRACTION = 0.85
DEFAULT_SAMPLES_PER_TRAJECTORY = 20

DEG = math.pi / 180.0


@dataclass(frozen=True)
class CorruptionSpec:
    """Inertial error model: constant heading drift, heading random walk,
    and a global speed scale."""

    heading_drift_rate: float = 0.0  # rad/s
    drift_walk_std: float = 0.0  # rad/sqrt(s)
    scale_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be > 0")


def random_corruption(seed: int, drift_range_deg_s=(-1.0, 1.0),
                      scale_range=(0.85, 1.2), walk_std_deg=0.05) -> CorruptionSpec:
    """Draw corruption magnitudes matching typical inertial error growth."""
    rng = np.random.default_rng(seed)
    return CorruptionSpec(
        heading_drift_rate=rng.uniform(*drift_range_deg_s) * DEG,
        drift_walk_std=walk_std_deg * DEG,
        scale_factor=rng.uniform(*scale_range),
        seed=seed,
    )


def random_waypoints(seed: int, count: int = 8, area=(250.0, 250.0),
                     margin: float = 20.0, min_separation: float = 25.0) -> np.ndarray:
    """Random waypoints in a rectangle, consecutive points well separated."""
    rng = np.random.default_rng(seed)
    lo = np.array([margin, margin])
    hi = np.array(area, dtype=float) - margin
    points = [rng.uniform(lo, hi)]
    while len(points) < count:
        cand = rng.uniform(lo, hi)
        if np.linalg.norm(cand - points[-1]) >= min_separation:
            points.append(cand)
    return np.array(points)


def waypoints_for_length(seed: int, target_length: float, area=(250.0, 250.0),
                         margin: float = 20.0, min_separation: float = 25.0) -> np.ndarray:
    """Random waypoints whose cumulative chord length reaches ``target_length``."""
    rng = np.random.default_rng(seed)
    lo = np.array([margin, margin])
    hi = np.array(area, dtype=float) - margin
    points = [rng.uniform(lo, hi)]
    total = 0.0
    while total < target_length:
        cand = rng.uniform(lo, hi)
        step = np.linalg.norm(cand - points[-1])
        if step >= min_separation:
            points.append(cand)
            total += step
    return np.array(points)


def trim_to_duration(traj: InertialTrajectory, gt: PositionSeries,
                     duration: float) -> tuple[InertialTrajectory, PositionSeries]:
    """Keep only the frames within ``duration`` seconds of the start."""
    n = int(np.searchsorted(traj.timestamps, traj.timestamps[0] + duration + 1e-9,
                            side="right"))
    if n < 2:
        raise ValueError("duration keeps fewer than two frames")
    return (InertialTrajectory(traj.timestamps[:n], traj.speeds[:n], traj.headings[:n]),
            PositionSeries(gt.timestamps[:n], gt.positions[:n]))


def benchmark_instance(seed: int, duration_s: float = 600.0, rate_hz: float = 50.0,
                       speed_mps: float = 1.2, area_m: float = 250.0,
                       drift_range_deg_s=(-1.0, 1.0), scale_range=(0.85, 1.2),
                       walk_std_deg: float = 0.0
                       ) -> tuple[InertialTrajectory, PositionSeries, CorruptionSpec]:
    """One seeded benchmark trajectory: ground truth plus its corrupted twin.

    Returns (corrupted trajectory, ground-truth series, corruption used).
    The spline is generated long enough and trimmed to the exact duration.
    """
    waypoints = waypoints_for_length(seed, speed_mps * duration_s * 1.1 + 50.0,
                                     area=(area_m, area_m))
    clean, gt = generate_spline_trajectory(waypoints, speed_mps, rate_hz)
    clean, gt = trim_to_duration(clean, gt, duration_s)
    rng = np.random.default_rng(seed + 1_000_000)
    spec = CorruptionSpec(
        heading_drift_rate=rng.uniform(*drift_range_deg_s) * DEG,
        drift_walk_std=walk_std_deg * DEG,
        scale_factor=rng.uniform(*scale_range),
        seed=seed,
    )
    return corrupt(clean, spec), gt, spec


def generate_spline_trajectory(waypoints, speed: float, rate: float
                               ) -> tuple[InertialTrajectory, PositionSeries]:
    """Constant-speed trajectory along a natural cubic spline.

    The spline is arc-length reparameterized and sampled at the frame rate;
    per-frame speeds and headings come from the sampled chords, so
    re-integrating them reproduces the ground-truth positions exactly.
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 2:
        raise ValueError("need at least two 2D waypoints")
    chord = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    if np.any(chord <= 0):
        raise ValueError("consecutive waypoints must be distinct")
    if speed <= 0 or rate <= 0:
        raise ValueError("speed and rate must be > 0")

    u_knots = np.concatenate([[0.0], np.cumsum(chord)])
    spline = CubicSpline(u_knots, wp, bc_type="natural", axis=0)

    # dense arc-length table for the constant-speed reparameterization
    dt = 1.0 / rate
    n_dense = max(int(u_knots[-1] / (speed * dt) * 8), 2000)
    u_dense = np.linspace(0.0, u_knots[-1], n_dense)
    p_dense = spline(u_dense)
    seg = np.linalg.norm(np.diff(p_dense, axis=0), axis=1)
    s_dense = np.concatenate([[0.0], np.cumsum(seg)])
    total = s_dense[-1]

    n_frames = int(total / (speed * dt)) + 1
    s_targets = speed * dt * np.arange(n_frames)
    u_targets = np.interp(s_targets, s_dense, u_dense)
    positions = spline(u_targets)

    steps = np.diff(positions, axis=0)
    speeds = np.concatenate([[0.0], np.linalg.norm(steps, axis=1)])
    headings = np.arctan2(steps[:, 1], steps[:, 0])
    headings = np.concatenate([headings[:1], headings])

    timestamps = dt * np.arange(n_frames)
    traj = InertialTrajectory(timestamps=timestamps, speeds=speeds, headings=headings)
    gt = PositionSeries(timestamps=timestamps, positions=positions)
    return traj, gt


def corrupt(traj: InertialTrajectory, spec: CorruptionSpec) -> InertialTrajectory:
    """Apply heading drift/random-walk and a speed scale; keeps timestamps."""
    tau = traj.timestamps - traj.timestamps[0]
    headings = traj.headings + spec.heading_drift_rate * tau
    if spec.drift_walk_std > 0:
        rng = np.random.default_rng(spec.seed)
        increments = rng.normal(0.0, 1.0, len(traj) - 1) * np.sqrt(np.diff(traj.timestamps))
        headings = headings + np.concatenate([[0.0], np.cumsum(spec.drift_walk_std * increments)])
    return InertialTrajectory(timestamps=traj.timestamps.copy(),
                              speeds=traj.speeds * spec.scale_factor,
                              headings=headings)


def simulate_flp(gt: PositionSeries, interval: float,
                 noise_std: float = FLP_NOISE_STD_M,
                 reported_accuracy: float = FLP_REPORTED_ACCURACY_M,
                 seed: int = 0) -> list[FlpFix]:
    """Noisy position fixes sampled every ``interval`` seconds (endpoints inclusive)."""
    if interval <= 0:
        raise ValueError("interval must be > 0")
    rng = np.random.default_rng(seed)
    t0, t1 = gt.timestamps[0], gt.timestamps[-1]
    times = np.arange(t0, t1 + 1e-9, interval)
    noise = rng.normal(0.0, noise_std, (len(times), 2)) if noise_std > 0 else np.zeros((len(times), 2))
    points = gt.at(times) + noise
    return [FlpFix(t=float(t), position=p, accuracy=float(reported_accuracy))
            for t, p in zip(times, points)]


def two_point_similarity(a: np.ndarray, b: np.ndarray,
                         a2: np.ndarray, b2: np.ndarray):
    """Scaled rigid transform mapping segment endpoints a->a2, b->b2.

    Uses the complex-plane closed form; a near-degenerate baseline (|b - a|
    under one pixel) falls back to pure translation by (a2 - a).
    """
    base = complex(*(b - a))
    if abs(base) < 1.0:
        shift = a2 - a
        return lambda p: np.asarray(p, dtype=float) + shift
    z = complex(*(b2 - a2)) / base
    a_c, a2_c = complex(*a), complex(*a2)

    def apply(p):
        p = np.asarray(p, dtype=float)
        w = (p[..., 0] + 1j * p[..., 1] - a_c) * z + a2_c
        return np.stack([w.real, w.imag], axis=-1)

    return apply


def _heading_of(series: PositionSeries, frame: int) -> float:
    """Direction of the step entering ``frame`` (leaving it for frame 0)."""
    if frame == 0:
        step = series.positions[1] - series.positions[0]
    else:
        step = series.positions[frame] - series.positions[frame - 1]
    return math.atan2(step[1], step[0])


def _resample_plan(plan: FloorplanRaster, crop_offset: np.ndarray,
                   flip: bool, angle: float) -> np.ndarray:
    """Nearest-neighbor sample of the plan over an augmented crop window."""
    xs, ys = np.meshgrid(np.arange(WINDOW_PX, dtype=float),
                         np.arange(WINDOW_PX, dtype=float))
    cx = cy = (WINDOW_PX - 1) / 2.0
    # invert the augmentation: unrotate about the window center, then unflip
    c, s = math.cos(-angle), math.sin(-angle)
    ux = c * (xs - cx) - s * (ys - cy) + cx
    uy = s * (xs - cx) + c * (ys - cy) + cy
    if flip:
        ux = (WINDOW_PX - 1) - ux
    px = np.rint(ux + crop_offset[0]).astype(int)
    py = np.rint(uy + crop_offset[1]).astype(int)
    h, w = plan.rgb.shape[:2]
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    out = np.empty((WINDOW_PX, WINDOW_PX, 3), dtype=np.uint8)
    out[:] = np.asarray(plan.background_color(), dtype=np.uint8)
    out[inside] = plan.rgb[py[inside], px[inside]]
    return out


def _augment_points(points: np.ndarray, flip: bool, angle: float) -> np.ndarray:
    """Flip/rotate crop-local continuous coordinates about the window center."""
    q = np.asarray(points, dtype=float).copy()
    cx = cy = (WINDOW_PX - 1) / 2.0
    if flip:
        q[..., 0] = (WINDOW_PX - 1) - q[..., 0]
    c, s = math.cos(angle), math.sin(angle)
    x = c * (q[..., 0] - cx) - s * (q[..., 1] - cy) + cx
    y = s * (q[..., 0] - cx) + c * (q[..., 1] - cy) + cy
    return np.stack([x, y], axis=-1)


def make_training_sample(traj: InertialTrajectory, gt: PositionSeries,
                         plan: FloorplanRaster, rng: np.random.Generator,
                         noise_std_px: float = SAMPLE_NOISE_STD_PX,
                         augment: bool = True) -> tuple[SegmentSample, FlowField]:
    """One training pair: warped segment image plus its correction-flow target.

    Procedure: anchor the inertial trajectory to the ground truth at a random
    reference frame (position + motion direction), follow it until it nears
    the window border, perturb the segment endpoints with Gaussian pixel
    noise, warp by the endpoint-determined similarity, rasterize, and record
    per-pixel displacements back to the ground truth. A shared random
    horizontal flip and rotation go on top.
    """
    reg = plan.registration
    n = len(traj)
    if n < 3:
        raise ValueError("trajectory too short to crop")
    ref = int(rng.integers(0, max(int(n * SAMPLE_REFERENCE_FRACTION), 1)))

    raw = integrate(traj, CorrectionParams.identity(traj.duration))
    gt_dir = _heading_of(gt, ref)
    raw_dir = _heading_of(raw, ref)
    rot = gt_dir - raw_dir
    c, s = math.cos(rot), math.sin(rot)
    rot_m = np.array([[c, -s], [s, c]])
    aligned = (raw.positions - raw.positions[ref]) @ rot_m.T + gt.positions[ref]

    center_px = world_to_pixel(gt.positions[ref], reg)
    crop_offset = np.rint(center_px).astype(int) - WINDOW_PX // 2
    aligned_px = world_to_pixel(aligned, reg) - crop_offset
    half = WINDOW_PX / 2.0
    margin = half - SAMPLE_BORDER_MARGIN_PX
    rel = aligned_px[ref:] - np.array([half, half])
    outside = np.max(np.abs(rel), axis=1) >= margin
    stop = ref + (int(np.argmax(outside)) - 1 if np.any(outside) else len(rel) - 1)
    if stop <= ref:
        raise ValueError("trajectory too short to crop")

    seg_px = aligned_px[ref:stop + 1]
    first, last = seg_px[0], seg_px[-1]
    warp = two_point_similarity(
        first, last,
        first + rng.normal(0.0, noise_std_px, 2),
        last + rng.normal(0.0, noise_std_px, 2),
    )
    warped_px = warp(seg_px)
    gt_px = world_to_pixel(gt.positions[ref:stop + 1], reg) - crop_offset

    flip = bool(rng.integers(0, 2)) if augment else False
    angle = float(rng.uniform(0.0, 2.0 * math.pi)) if augment else 0.0
    warped_px = _augment_points(warped_px, flip, angle)
    gt_px = _augment_points(gt_px, flip, angle)

    times = traj.timestamps[ref:stop + 1]
    span = float(times[-1] - times[0])
    tau = (times - times[0]) / span if span > 0 else np.zeros(len(times))
    colors = rainbow_colors(tau)
    owner = paint_owner_map(warped_px)
    painted = owner >= 0

    traj_rgb = np.zeros((WINDOW_PX, WINDOW_PX, 3), dtype=np.float32)
    traj_rgb[painted] = colors[owner[painted]]
    plan_rgb = _resample_plan(plan, crop_offset, flip, angle)

    image = np.empty((6, WINDOW_PX, WINDOW_PX), dtype=np.float32)
    image[0:3] = np.moveaxis(plan_rgb.astype(np.float32) / 255.0, -1, 0)
    image[3:6] = np.moveaxis(traj_rgb, -1, 0)

    vectors = (gt_px - warped_px).astype(np.float32)
    target = flow_from_vectors(warped_px, vectors)

    sample = SegmentSample(image=image, crop_offset=crop_offset,
                           frame_range=(ref, stop),
                           frame_pixels=np.clip(warped_px, 0.0, WINDOW_PX - 1e-6),
                           span=span)
    return sample, target


def make_training_samples(traj: InertialTrajectory, gt: PositionSeries,
                          plan: FloorplanRaster, out_dir,
                          count: int = DEFAULT_SAMPLES_PER_TRAJECTORY,
                          seed: int = 0, augment: bool = True) -> int:
    """Write ``count`` training pairs to the exchange directory."""
    if count < 1:
        raise ValueError("count must be >= 1")
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = np.random.default_rng(seed).spawn(count)
    for k, rng in enumerate(streams):
        sample, target = make_training_sample(traj, gt, plan, rng, augment=augment)
        write_segment_input(input_path(out, k), sample)
        write_flow(target_path(out, k), target, sample_meta(sample))
    return count
