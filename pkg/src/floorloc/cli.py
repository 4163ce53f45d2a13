"""Command-line entry point.

Subcommands: ``run`` (the full pipeline), ``synth`` (trajectory / corrupt /
flp / samples generators), ``eval`` (error metrics, optional figures), and
``plot`` (trajectory-over-floorplan rendering).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth
from .evaluate import compute_errors, format_report_table, gt_points_from_series, write_report_json
from .geo import load_floorplan, load_registration
from .optimizer import read_fixes_csv, write_fixes_csv
from .pipeline import (
    FlowBackendError,
    PipelineConfig,
    PipelineInputError,
    SolverStageError,
    run_pipeline,
)
from .trajectory import (
    read_positions_csv,
    read_trajectory_csv,
    write_positions_csv,
    write_trajectory_csv,
)

log = logging.getLogger("floorloc")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_FLOW = 4


def _load_plan(floorplan, registration):
    reg, legend = load_registration(registration)
    return load_floorplan(floorplan, legend, reg)


def _cmd_run(args) -> int:
    config = PipelineConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.output:
        config.output_dir = args.output
    stages = run_pipeline(config)
    print(f"pipeline finished: stages {' -> '.join(stages.order)}")
    print(f"outputs written to {config.output_dir}")
    return EXIT_OK


def _cmd_synth_trajectory(args) -> int:
    if args.waypoints:
        waypoints = np.asarray(json.loads(Path(args.waypoints).read_text()), dtype=float)
    else:
        waypoints = synth.random_waypoints(args.seed or 0, count=args.n_waypoints,
                                           area=(args.area, args.area))
    traj, gt = synth.generate_spline_trajectory(waypoints, args.speed, args.rate)
    write_trajectory_csv(args.out, traj)
    if args.gt_out:
        write_positions_csv(args.gt_out, gt)
    print(f"wrote {len(traj)} frames ({traj.duration:.1f} s) to {args.out}")
    return EXIT_OK


def _cmd_synth_corrupt(args) -> int:
    traj = read_trajectory_csv(args.traj)
    if args.random:
        spec = synth.random_corruption(args.seed or 0)
    else:
        spec = synth.CorruptionSpec(
            heading_drift_rate=args.drift_deg_s * synth.DEG,
            drift_walk_std=args.walk_std_deg * synth.DEG,
            scale_factor=args.scale,
            seed=args.seed or 0,
        )
    write_trajectory_csv(args.out, synth.corrupt(traj, spec))
    print(f"corrupted trajectory written to {args.out} "
          f"(drift {spec.heading_drift_rate / synth.DEG:+.3f} deg/s, "
          f"scale {spec.scale_factor:.3f})")
    return EXIT_OK


def _cmd_synth_flp(args) -> int:
    gt = read_positions_csv(args.gt)
    fixes = synth.simulate_flp(gt, args.interval, noise_std=args.noise_std,
                               reported_accuracy=args.accuracy, seed=args.seed or 0)
    write_fixes_csv(args.out, fixes)
    print(f"wrote {len(fixes)} fixes to {args.out}")
    return EXIT_OK


def _cmd_synth_samples(args) -> int:
    traj = read_trajectory_csv(args.traj)
    gt = read_positions_csv(args.gt)
    plan = _load_plan(args.floorplan, args.registration)
    n = synth.make_training_samples(traj, gt, plan, args.out, count=args.count,
                                    seed=args.seed or 0)
    print(f"wrote {n} sample pairs to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    estimate = read_positions_csv(args.estimate)
    gt_series = read_positions_csv(args.gt)
    gt_points = gt_points_from_series(gt_series, hz=args.gt_hz)
    report = compute_errors(estimate, gt_points)
    print(format_report_table({"estimate": report}))
    if args.out:
        write_report_json(args.out, {"estimate": report})
        print(f"report written to {args.out}")
    if args.plot:
        if not (args.floorplan and args.registration):
            print("--plot requires --floorplan and --registration", file=sys.stderr)
            return EXIT_INPUT
        from .plots import plot_series_on_floorplan

        plan = _load_plan(args.floorplan, args.registration)
        out_png = args.plot if isinstance(args.plot, str) else "eval.png"
        plot_series_on_floorplan(plan, estimate, out_png, gt_points=gt_points,
                                 title=f"mean error {report.mean:.2f} m")
        print(f"figure written to {out_png}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    series = read_positions_csv(args.positions)
    plan = _load_plan(args.floorplan, args.registration)
    gt_points = None
    if args.gt:
        gt_points = gt_points_from_series(read_positions_csv(args.gt))
    fixes = read_fixes_csv(args.fixes) if args.fixes else None
    from .plots import plot_series_on_floorplan

    plot_series_on_floorplan(plan, series, args.out, gt_points=gt_points, fixes=fixes)
    print(f"figure written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floorloc",
                                     description="Dense indoor location history "
                                                 "from inertial + fix + floorplan fusion")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--verbose", action="store_true")
    # accept the global flags after the subcommand as well
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full pipeline", parents=[common])
    p_run.add_argument("--config", required=True, help="pipeline config JSON")
    p_run.add_argument("--output", default=None, help="override output directory")
    p_run.set_defaults(func=_cmd_run)

    p_synth = sub.add_parser("synth", help="synthetic data generators")
    synth_sub = p_synth.add_subparsers(dest="synth_command", required=True)

    p_traj = synth_sub.add_parser("trajectory", help="spline ground-truth trajectory",
                                  parents=[common])
    p_traj.add_argument("--out", required=True)
    p_traj.add_argument("--gt-out", default=None, help="ground-truth positions CSV")
    p_traj.add_argument("--waypoints", default=None, help="JSON file of [x, y] waypoints")
    p_traj.add_argument("--n-waypoints", type=int, default=8)
    p_traj.add_argument("--area", type=float, default=100.0, help="square side (m)")
    p_traj.add_argument("--speed", type=float, default=1.2, help="walking speed (m/s)")
    p_traj.add_argument("--rate", type=float, default=50.0, help="frame rate (Hz)")
    p_traj.set_defaults(func=_cmd_synth_trajectory)

    p_cor = synth_sub.add_parser("corrupt", help="apply inertial-style errors", parents=[common])
    p_cor.add_argument("--traj", required=True)
    p_cor.add_argument("--out", required=True)
    p_cor.add_argument("--drift-deg-s", type=float, default=0.0)
    p_cor.add_argument("--walk-std-deg", type=float, default=0.0,
                       help="heading random walk std (deg/sqrt(s))")
    p_cor.add_argument("--scale", type=float, default=1.0)
    p_cor.add_argument("--random", action="store_true",
                       help="draw drift/scale from the default ranges")
    p_cor.set_defaults(func=_cmd_synth_corrupt)

    p_flp = synth_sub.add_parser("flp", help="simulate sparse noisy fixes", parents=[common])
    p_flp.add_argument("--gt", required=True)
    p_flp.add_argument("--out", required=True)
    p_flp.add_argument("--interval", type=float, default=60.0)
    p_flp.add_argument("--noise-std", type=float, default=synth.FLP_NOISE_STD_M)
    p_flp.add_argument("--accuracy", type=float, default=synth.FLP_REPORTED_ACCURACY_M)
    p_flp.set_defaults(func=_cmd_synth_flp)

    p_samp = synth_sub.add_parser("samples", help="CNN training sample pairs", parents=[common])
    p_samp.add_argument("--traj", required=True, help="corrupted trajectory CSV")
    p_samp.add_argument("--gt", required=True, help="ground-truth positions CSV")
    p_samp.add_argument("--floorplan", required=True)
    p_samp.add_argument("--registration", required=True)
    p_samp.add_argument("--out", required=True, help="exchange directory")
    p_samp.add_argument("--count", type=int, default=synth.DEFAULT_SAMPLES_PER_TRAJECTORY)
    p_samp.set_defaults(func=_cmd_synth_samples)

    p_eval = sub.add_parser("eval", help="error metrics against ground truth", parents=[common])
    p_eval.add_argument("--estimate", required=True, help="positions CSV")
    p_eval.add_argument("--gt", required=True, help="ground-truth positions CSV")
    p_eval.add_argument("--gt-hz", type=float, default=1.0)
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.add_argument("--plot", default=None, help="also render a PNG figure")
    p_eval.add_argument("--floorplan", default=None)
    p_eval.add_argument("--registration", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_plot = sub.add_parser("plot", help="render a trajectory over the floorplan", parents=[common])
    p_plot.add_argument("--positions", required=True)
    p_plot.add_argument("--floorplan", required=True)
    p_plot.add_argument("--registration", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--gt", default=None)
    p_plot.add_argument("--fixes", default=None)
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineInputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverStageError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FlowBackendError as exc:
        print(f"flow backend error: {exc}", file=sys.stderr)
        return EXIT_FLOW
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
