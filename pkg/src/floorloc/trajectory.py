"""Inertial trajectory model and the knot-based correction parameterization.

A trajectory is a per-frame sequence of speed (meters per frame step, i.e.
the displacement magnitude into that frame) and heading (rad). Frame 0
anchors the series: its position is the start displacement and its own
speed/heading entry never contributes to integration.

Corrections are piecewise-linear in time: one scale knot per 100 s and one
angle knot per 20 s by default, linearly interpolated between knots and
clamped past the last knot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SCALE_INTERVAL_S = 100.0
DEFAULT_ANGLE_INTERVAL_S = 20.0


@dataclass(frozen=True)
class InertialTrajectory:
    timestamps: np.ndarray  # seconds, strictly increasing
    speeds: np.ndarray  # meters per frame step, >= 0
    headings: np.ndarray  # rad

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        sp = np.asarray(self.speeds, dtype=float)
        hd = np.asarray(self.headings, dtype=float)
        if not (len(ts) == len(sp) == len(hd)):
            raise ValueError("timestamps, speeds, headings must have equal length")
        if len(ts) == 0:
            raise ValueError("trajectory must contain at least one frame")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(sp < 0):
            raise ValueError("speeds must be >= 0")
        for name, arr in (("timestamps", ts), ("speeds", sp), ("headings", hd)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass(frozen=True)
class PositionSeries:
    timestamps: np.ndarray  # seconds
    positions: np.ndarray  # (N, 2) meters, world frame

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (len(ts), 2):
            raise ValueError("positions must be (N, 2) matching timestamps")
        ts.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.timestamps)

    def at(self, t) -> np.ndarray:
        """Linearly interpolate positions at times ``t`` (clamped at the ends)."""
        t = np.asarray(t, dtype=float)
        x = np.interp(t, self.timestamps, self.positions[:, 0])
        y = np.interp(t, self.timestamps, self.positions[:, 1])
        return np.stack([x, y], axis=-1)


def knot_count(duration: float, interval: float) -> int:
    """Number of knots covering [0, duration]: ceil(duration/interval) + 1."""
    if interval <= 0:
        raise ValueError("knot interval must be > 0")
    return int(math.ceil(duration / interval - 1e-12)) + 1


@dataclass
class CorrectionParams:
    """Scale/angle correction knots plus the start displacement.

    The identity element (no correction) is all scale knots 1, all angle
    knots 0, zero start offset.
    """

    scale_knots: np.ndarray  # multiplicative speed corrections, > 0
    angle_knots: np.ndarray  # additive heading corrections, rad
    start_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale_interval: float = DEFAULT_SCALE_INTERVAL_S
    angle_interval: float = DEFAULT_ANGLE_INTERVAL_S

    def __post_init__(self):
        self.scale_knots = np.asarray(self.scale_knots, dtype=float)
        self.angle_knots = np.asarray(self.angle_knots, dtype=float)
        self.start_offset = np.asarray(self.start_offset, dtype=float)
        if self.scale_knots.size == 0 or self.angle_knots.size == 0:
            raise ValueError("knot arrays must be non-empty")
        if np.any(self.scale_knots <= 0):
            raise ValueError("scale knots must be > 0")
        if self.scale_interval <= 0 or self.angle_interval <= 0:
            raise ValueError("knot intervals must be > 0")

    @classmethod
    def identity(cls, duration: float,
                 scale_interval: float = DEFAULT_SCALE_INTERVAL_S,
                 angle_interval: float = DEFAULT_ANGLE_INTERVAL_S) -> "CorrectionParams":
        return cls(
            scale_knots=np.ones(knot_count(duration, scale_interval)),
            angle_knots=np.zeros(knot_count(duration, angle_interval)),
            start_offset=np.zeros(2),
            scale_interval=scale_interval,
            angle_interval=angle_interval,
        )

    def covers(self, duration: float) -> bool:
        return (len(self.scale_knots) >= knot_count(duration, self.scale_interval)
                and len(self.angle_knots) >= knot_count(duration, self.angle_interval))

    def copy(self) -> "CorrectionParams":
        return CorrectionParams(self.scale_knots.copy(), self.angle_knots.copy(),
                                self.start_offset.copy(), self.scale_interval,
                                self.angle_interval)


def knot_weights(n_knots: int, interval: float, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear interpolation weights at times ``t`` (seconds from the anchor).

    Returns (lo_index, lo_weight, hi_weight) such that the interpolated value
    is lo_weight * knots[lo] + hi_weight * knots[lo + 1], with times at or
    beyond the last knot clamped onto it.
    """
    t = np.asarray(t, dtype=float)
    u = np.clip(t / interval, 0.0, n_knots - 1)
    lo = np.minimum(u.astype(int), n_knots - 2) if n_knots > 1 else np.zeros(u.shape, dtype=int)
    frac = u - lo
    return lo, 1.0 - frac, frac


def interpolate_correction(knots, interval: float, t):
    """Evaluate a piecewise-linear knot sequence at time(s) ``t``."""
    knots = np.asarray(knots, dtype=float)
    if knots.size == 0:
        raise ValueError("knot array must be non-empty")
    if knots.size == 1:
        return np.broadcast_to(knots[0], np.shape(t)).copy() if np.ndim(t) else float(knots[0])
    lo, w_lo, w_hi = knot_weights(len(knots), interval, t)
    out = w_lo * knots[lo] + w_hi * knots[lo + 1]
    return out if np.ndim(t) else float(out)


def corrected_steps(traj: InertialTrajectory, params: CorrectionParams) -> np.ndarray:
    """Per-frame displacement vectors after correction; row 0 is zero."""
    tau = traj.timestamps - traj.timestamps[0]
    ds = interpolate_correction(params.scale_knots, params.scale_interval, tau)
    dth = interpolate_correction(params.angle_knots, params.angle_interval, tau)
    phi = traj.headings + dth
    steps = (traj.speeds * ds)[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    steps[0] = 0.0  # frame 0 anchors the series
    return steps


def integrate(traj: InertialTrajectory, params: CorrectionParams) -> PositionSeries:
    """Cumulative-sum the corrected per-frame displacements.

    Frame 0 sits at the start offset; frame f adds speed * scale-correction
    steps along the corrected headings of frames 1..f.
    """
    if not params.covers(traj.duration):
        raise ValueError("correction params do not cover the trajectory duration")
    positions = params.start_offset + np.cumsum(corrected_steps(traj, params), axis=0)
    return PositionSeries(timestamps=traj.timestamps, positions=positions)


def subsample_constraints(series: PositionSeries, stride: int, radius: float):
    """Pick every ``stride``-th frame as a positional fix with the given radius."""
    from .optimizer import FlpFix  # local import to avoid a module cycle

    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(series) == 0:
        raise ValueError("cannot subsample an empty series")
    idx = np.arange(0, len(series), stride)
    return [FlpFix(t=float(series.timestamps[i]), position=series.positions[i].copy(),
                   accuracy=float(radius)) for i in idx]


def read_trajectory_csv(path) -> InertialTrajectory:
    """Read a trajectory CSV with header ``t,speed,heading``."""
    rows = _read_csv(path, ("t", "speed", "heading"))
    return InertialTrajectory(timestamps=rows[:, 0], speeds=rows[:, 1], headings=rows[:, 2])


def write_trajectory_csv(path, traj: InertialTrajectory) -> None:
    _write_csv(path, ("t", "speed", "heading"),
               np.column_stack([traj.timestamps, traj.speeds, traj.headings]))


def read_positions_csv(path) -> PositionSeries:
    """Read a position CSV with header ``t,x,y``."""
    rows = _read_csv(path, ("t", "x", "y"))
    return PositionSeries(timestamps=rows[:, 0], positions=rows[:, 1:3])


def write_positions_csv(path, series: PositionSeries) -> None:
    _write_csv(path, ("t", "x", "y"),
               np.column_stack([series.timestamps, series.positions]))


def _read_csv(path, expected_header: tuple[str, ...]) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != expected_header:
            raise ValueError(f"{path}: expected header {','.join(expected_header)}, "
                             f"got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise ValueError(f"{path}:{lineno}: expected {len(expected_header)} "
                                 f"columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {row}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _write_csv(path, header: tuple[str, ...], rows: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.9f}" for v in row])
    tmp.replace(path)
