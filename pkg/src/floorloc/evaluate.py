"""Localization-error metrics against sparse or dense ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trajectory import PositionSeries


@dataclass
class ErrorReport:
    mean: float
    q1: float
    q3: float
    rmse: float
    per_gt_errors: list  # (t, error m) pairs
    count: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "q1": self.q1,
            "q3": self.q3,
            "rmse": self.rmse,
            "count": self.count,
            "per_gt_errors": [[t, e] for t, e in self.per_gt_errors],
        }


def gt_points_from_series(series: PositionSeries, hz: float = 1.0) -> list:
    """Subsample a dense ground-truth series to (t, position) points."""
    if hz <= 0:
        raise ValueError("hz must be > 0")
    t0, t1 = series.timestamps[0], series.timestamps[-1]
    times = np.arange(t0, t1 + 1e-9, 1.0 / hz)
    points = series.at(times)
    return [(float(t), p) for t, p in zip(times, points)]


def compute_errors(estimate: PositionSeries, gt) -> ErrorReport:
    """Euclidean error of the time-interpolated estimate at each gt point.

    Quartiles use linear interpolation of the order statistics.
    """
    gt = list(gt)
    if not gt:
        raise ValueError("ground truth is empty")
    times = np.array([t for t, _ in gt], dtype=float)
    points = np.array([np.asarray(p, dtype=float) for _, p in gt])
    ts = estimate.timestamps
    slack = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0
    if np.any(times < ts[0] - slack) or np.any(times > ts[-1] + slack):
        raise ValueError("ground-truth timestamp outside the estimate's range")
    errors = np.linalg.norm(estimate.at(times) - points, axis=1)
    q1, q3 = np.percentile(errors, [25.0, 75.0])
    return ErrorReport(
        mean=float(np.mean(errors)),
        q1=float(q1),
        q3=float(q3),
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        per_gt_errors=[(float(t), float(e)) for t, e in zip(times, errors)],
        count=len(errors),
    )


def format_report_table(reports: dict) -> str:
    """Aligned-column text table over named ErrorReports."""
    header = f"{'variant':<22} {'mean':>8} {'q1':>8} {'q3':>8} {'rmse':>8} {'n':>6}"
    lines = [header, "-" * len(header)]
    for name, rep in reports.items():
        lines.append(f"{name:<22} {rep.mean:>8.3f} {rep.q1:>8.3f} "
                     f"{rep.q3:>8.3f} {rep.rmse:>8.3f} {rep.count:>6d}")
    return "\n".join(lines)


def write_report_json(path, reports: dict, extra: dict | None = None) -> None:
    payload = {name: rep.to_dict() for name, rep in reports.items()}
    if extra:
        payload.update(extra)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2))
    tmp.replace(path)


def compare_baselines(traj, fixes, gt_points, plan, config=None) -> dict:
    """Error reports for the standard variants on one instance.

    Variants: raw dead reckoning anchored at the true start, the piecewise
    linear polyline through the fixes, the optimized trajectory, the
    optimized trajectory after one flow refinement, and the full
    two-iteration pipeline (flow refinement uses the ground truth as the
    oracle flow source).
    """
    from .optimizer import OptimizerConfig, geolocate
    from .pipeline import flow_refine
    from .trajectory import CorrectionParams, integrate

    config = config or OptimizerConfig()
    gt_points = list(gt_points)
    gt_series = PositionSeries(
        timestamps=np.array([t for t, _ in gt_points]),
        positions=np.array([p for _, p in gt_points]),
    )

    reports = {}
    identity = CorrectionParams.identity(traj.duration, config.scale_interval,
                                         config.angle_interval)
    identity.start_offset = gt_points[0][1].copy()
    uncorrected = integrate(traj, identity)
    reports["uncorrected"] = compute_errors(uncorrected, gt_points)

    polyline = PositionSeries(
        timestamps=np.array([f.t for f in fixes]),
        positions=np.array([f.position for f in fixes]),
    )
    reports["flp_polyline"] = compute_errors(polyline, gt_points)

    result = geolocate(traj, fixes, config)
    optimized = integrate(traj, result.params)
    reports["optimized"] = compute_errors(optimized, gt_points)

    refined, _ = flow_refine(optimized, plan, gt_series)
    reports["optimized_flow"] = compute_errors(refined, gt_points)

    from .pipeline import PipelineConfig, run_pipeline_in_memory

    pipe_cfg = PipelineConfig(optimizer=config, flow_backend="oracle", iterations=2)
    stages = run_pipeline_in_memory(traj, fixes, plan, pipe_cfg, gt=gt_series)
    reports["two_iteration"] = compute_errors(stages.final, gt_points)
    return reports
