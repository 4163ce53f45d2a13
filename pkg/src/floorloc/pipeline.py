"""End-to-end pipeline: optimize against fixes, refine with correction flows,
then repeat with self-constraints subsampled from the refined history.

Flow backends:
  * ``none``: stop after the first optimization (no floorplan fusion).
  * ``oracle``: flows computed from a supplied ground-truth series.
  * ``external-exchange``: write segment inputs to the exchange directory and
    obtain flows from an external producer (run a command, or poll with a
    timeout).
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluate import compute_errors, gt_points_from_series, write_report_json
from .exchange import (
    flow_path,
    input_path,
    read_flow,
    write_segment_input,
)
from .geo import FloorplanRaster, load_floorplan, load_registration
from .optimizer import (
    FlpFix,
    OptimizerConfig,
    SolveReport,
    geolocate,
    read_fixes_csv,
    solve,
)
from .raster import FlowField, SegmentSample, apply_flow, build_segment_samples, oracle_flow, stitch
from .trajectory import (
    InertialTrajectory,
    PositionSeries,
    integrate,
    read_positions_csv,
    read_trajectory_csv,
    subsample_constraints,
    write_positions_csv,
)

log = logging.getLogger(__name__)

FLOW_BACKENDS = ("external-exchange", "oracle", "none")


class PipelineInputError(Exception):
    """Missing or malformed pipeline inputs (exit code 2)."""


class SolverStageError(Exception):
    """Optimization stage failed (exit code 3)."""


class FlowBackendError(Exception):
    """Flow backend unavailable or timed out (exit code 4)."""


@dataclass
class PipelineConfig:
    trajectory_path: str | None = None
    fixes_path: str | None = None
    floorplan_path: str | None = None
    registration_path: str | None = None
    gt_path: str | None = None
    output_dir: str = "out"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    iterations: int = 2
    self_constraint_stride: int = 200
    self_constraint_radius: float = 2.0
    flow_backend: str = "external-exchange"
    flow_command: str | None = None
    flow_timeout_s: float = 600.0
    flow_poll_interval_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.self_constraint_stride < 1:
            raise ValueError("self_constraint_stride must be >= 1")
        if self.flow_backend == "external":
            self.flow_backend = "external-exchange"
        if self.flow_backend not in FLOW_BACKENDS:
            raise ValueError(f"unknown flow backend {self.flow_backend!r}; "
                             f"expected one of {FLOW_BACKENDS}")

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise PipelineInputError(f"config file not found: {path}")
        with open(path) as fh:
            raw = json.load(fh)
        opt = OptimizerConfig(**raw.pop("optimizer", {}))
        try:
            return cls(optimizer=opt, **raw)
        except TypeError as exc:
            raise PipelineInputError(f"{path}: {exc}") from exc


@dataclass
class PipelineStages:
    """Per-stage position series and solver reports of one pipeline run."""

    series: dict[str, PositionSeries] = field(default_factory=dict)
    solver_reports: dict[str, SolveReport] = field(default_factory=dict)
    samples: dict[str, list[SegmentSample]] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)

    def add(self, name: str, series: PositionSeries) -> None:
        self.series[name] = series
        self.order.append(name)

    @property
    def final(self) -> PositionSeries:
        return self.series[self.order[-1]]


def ingest(trajectory_path, fixes_path, floorplan_path, registration_path
           ) -> tuple[InertialTrajectory, list[FlpFix], FloorplanRaster]:
    """Read and validate all pipeline inputs; errors carry file/line context."""
    for p in (trajectory_path, fixes_path, floorplan_path, registration_path):
        if not Path(p).is_file():
            raise PipelineInputError(f"input file not found: {p}")
    try:
        traj = read_trajectory_csv(trajectory_path)
        fixes = read_fixes_csv(fixes_path)
        reg, legend = load_registration(registration_path)
        plan = load_floorplan(floorplan_path, legend, reg)
    except (ValueError, OSError) as exc:
        raise PipelineInputError(str(exc)) from exc
    gaps = np.diff(traj.timestamps)
    if np.any(gaps > 1.0):
        n = int(np.count_nonzero(gaps > 1.0))
        log.warning("trajectory has %d gaps longer than 1 s (largest %.2f s)",
                    n, float(gaps.max()))
    return traj, fixes, plan


def flow_refine(series: PositionSeries, plan: FloorplanRaster,
                gt: PositionSeries) -> tuple[PositionSeries, list[SegmentSample]]:
    """One oracle flow refinement pass over a position series."""
    samples = build_segment_samples(series, plan)
    flows = [oracle_flow(s, series, gt, plan.registration) for s in samples]
    return _apply_flows(series, samples, flows, plan), samples


def _apply_flows(series: PositionSeries, samples: list[SegmentSample],
                 flows: list[FlowField], plan: FloorplanRaster) -> PositionSeries:
    corrections = [apply_flow(s, f, plan.registration) for s, f in zip(samples, flows)]
    stitched = stitch(samples, corrections, series.timestamps)
    return PositionSeries(timestamps=series.timestamps,
                          positions=series.positions + stitched)


class OracleFlowSource:
    def __init__(self, gt: PositionSeries):
        self.gt = gt

    def flows(self, samples: list[SegmentSample], series: PositionSeries,
              plan: FloorplanRaster, segments_dir) -> list[FlowField]:
        return [oracle_flow(s, series, self.gt, plan.registration) for s in samples]


class ExchangeFlowSource:
    """Write inputs to the exchange directory; run a command or poll for flows."""

    def __init__(self, command: str | None, timeout_s: float, poll_interval_s: float):
        self.command = command
        self.timeout_s = timeout_s
        self.poll_interval_s = poll_interval_s

    def flows(self, samples: list[SegmentSample], series: PositionSeries,
              plan: FloorplanRaster, segments_dir) -> list[FlowField]:
        if segments_dir is None:
            raise FlowBackendError("external-exchange backend requires an output directory")
        directory = Path(segments_dir)
        directory.mkdir(parents=True, exist_ok=True)
        for k, sample in enumerate(samples):
            write_segment_input(input_path(directory, k), sample)
        if self.command:
            cmd = [part.format(dir=str(directory)) for part in shlex.split(self.command)]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise FlowBackendError(
                    f"flow command failed ({proc.returncode}): {proc.stderr.strip()}")
        else:
            deadline = time.monotonic() + self.timeout_s
            while not all(flow_path(directory, k).is_file() for k in range(len(samples))):
                if time.monotonic() >= deadline:
                    raise FlowBackendError(
                        f"timed out after {self.timeout_s:.0f} s waiting for flow "
                        f"files in {directory}")
                time.sleep(self.poll_interval_s)
        out = []
        for k, sample in enumerate(samples):
            path = flow_path(directory, k)
            if not path.is_file():
                raise FlowBackendError(f"missing flow file: {path}")
            meta, field_ = read_flow(path)
            if tuple(meta.get("frame_range", ())) != tuple(sample.frame_range):
                raise FlowBackendError(f"{path}: frame_range mismatch with input")
            out.append(field_)
        return out


def _make_flow_source(config: PipelineConfig, gt: PositionSeries | None):
    if config.flow_backend == "none":
        return None
    if config.flow_backend == "oracle":
        if gt is None:
            raise FlowBackendError("oracle flow backend requires a ground-truth series")
        return OracleFlowSource(gt)
    return ExchangeFlowSource(config.flow_command, config.flow_timeout_s,
                              config.flow_poll_interval_s)


def run_pipeline_in_memory(traj: InertialTrajectory, fixes: list[FlpFix],
                           plan: FloorplanRaster, config: PipelineConfig,
                           gt: PositionSeries | None = None,
                           segments_root=None) -> PipelineStages:
    """Run optimization + flow iterations; with backend ``none`` the run stops
    after the first optimization."""
    source = _make_flow_source(config, gt)
    stages = PipelineStages()
    current_fixes = fixes
    params = None
    for it in range(1, config.iterations + 1):
        try:
            if params is None:
                result = geolocate(traj, current_fixes, config.optimizer)
            else:
                # Later iterations re-fit the knot model to the flow-refined
                # history. The pseudo-fixes are dense and trusted, so first
                # fit them tightly (radii treated as zero), then settle the
                # actual radius problem from there; feasibility-stop keeps
                # the regularizers from drifting inside the dead zones.
                tight = [FlpFix(f.t, f.position, 0.0) for f in current_fixes]
                ls = solve(traj, tight, config.optimizer, params)
                result = solve(traj, current_fixes, config.optimizer, ls.params,
                               stop_when_feasible=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolverStageError(f"iteration {it}: {exc}") from exc
        params = result.params
        positions = integrate(traj, params)
        stages.add(f"opt_iter{it}", positions)
        stages.solver_reports[f"iter{it}"] = result.report
        if source is None:
            break
        samples = build_segment_samples(positions, plan)
        stages.samples[f"iter{it}"] = samples
        seg_dir = Path(segments_root) / f"iter{it}" if segments_root else None
        flows = source.flows(samples, positions, plan, seg_dir)
        corrected = _apply_flows(positions, samples, flows, plan)
        stages.add(f"flow_iter{it}", corrected)
        if it < config.iterations:
            current_fixes = subsample_constraints(
                corrected, config.self_constraint_stride, config.self_constraint_radius)
    return stages


def run_pipeline(config: PipelineConfig) -> PipelineStages:
    """File-driven pipeline run; writes positions, solver reports, and the
    summary report into the output directory."""
    required = {
        "trajectory_path": config.trajectory_path,
        "fixes_path": config.fixes_path,
        "floorplan_path": config.floorplan_path,
        "registration_path": config.registration_path,
    }
    missing = [name for name, value in required.items() if not value]
    if missing:
        raise PipelineInputError(f"config is missing paths: {', '.join(missing)}")
    traj, fixes, plan = ingest(config.trajectory_path, config.fixes_path,
                               config.floorplan_path, config.registration_path)
    gt = None
    if config.gt_path:
        if not Path(config.gt_path).is_file():
            raise PipelineInputError(f"input file not found: {config.gt_path}")
        gt = read_positions_csv(config.gt_path)

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    segments_root = out / "segments"
    stages = run_pipeline_in_memory(traj, fixes, plan, config, gt=gt,
                                    segments_root=segments_root)

    write_positions_csv(out / "positions.csv", stages.final)
    for name, report in stages.solver_reports.items():
        report.write_json(out / f"solver_{name}.json")

    summary = {
        "stages": stages.order,
        "flow_backend": config.flow_backend,
        "iterations": config.iterations,
        "solver": {name: rep.to_dict() for name, rep in stages.solver_reports.items()},
    }
    if gt is not None:
        gt_points = gt_points_from_series(gt)
        reports = {name: compute_errors(stages.series[name], gt_points)
                   for name in stages.order}
        summary["errors"] = {name: rep.to_dict() for name, rep in reports.items()}
    write_report_json(out / "report.json", {}, extra=summary)
    return stages
