import json

import numpy as np
import pytest
from PIL import Image

from floorloc.cli import main as cli_main
from floorloc.optimizer import write_fixes_csv
from floorloc.pipeline import (
    FlowBackendError,
    PipelineConfig,
    PipelineInputError,
    ingest,
    run_pipeline,
    run_pipeline_in_memory,
)
from floorloc.synth import benchmark_instance, simulate_flp
from floorloc.trajectory import read_positions_csv, write_positions_csv, write_trajectory_csv

DURATION_S = 90.0


@pytest.fixture(scope="module")
def instance():
    bad, gt, _ = benchmark_instance(2, duration_s=DURATION_S)
    fixes = simulate_flp(gt, interval=15.0, noise_std=2.0, reported_accuracy=5.0,
                         seed=5)
    return bad, gt, fixes


@pytest.fixture
def input_files(tmp_path, instance):
    bad, gt, fixes = instance
    plan_png = tmp_path / "plan.png"
    Image.fromarray(np.full((625, 625, 3), 255, dtype=np.uint8)).save(plan_png)
    reg_json = tmp_path / "reg.json"
    reg_json.write_text(json.dumps({
        "pixels_per_meter": 2.5,
        "origin_world": [0.0, 0.0],
        "rotation_rad": 0.0,
        "flip_y": False,
        "legend": {"corridor": [255, 255, 255]},
    }))
    traj_csv = tmp_path / "traj.csv"
    write_trajectory_csv(traj_csv, bad)
    fixes_csv = tmp_path / "fixes.csv"
    write_fixes_csv(fixes_csv, fixes)
    gt_csv = tmp_path / "gt.csv"
    write_positions_csv(gt_csv, gt)
    return {
        "trajectory_path": str(traj_csv),
        "fixes_path": str(fixes_csv),
        "floorplan_path": str(plan_png),
        "registration_path": str(reg_json),
        "gt_path": str(gt_csv),
        "dir": tmp_path,
    }


def make_config(files, out_dir, backend="oracle", iterations=2, **kw):
    return PipelineConfig(
        trajectory_path=files["trajectory_path"],
        fixes_path=files["fixes_path"],
        floorplan_path=files["floorplan_path"],
        registration_path=files["registration_path"],
        gt_path=files["gt_path"],
        output_dir=str(out_dir),
        flow_backend=backend,
        iterations=iterations,
        **kw,
    )


class TestIngest:
    def test_missing_file(self, input_files):
        with pytest.raises(PipelineInputError, match="not found"):
            ingest("nope.csv", input_files["fixes_path"],
                   input_files["floorplan_path"], input_files["registration_path"])

    def test_non_monotonic_timestamp(self, input_files, tmp_path):
        bad_csv = tmp_path / "bad_traj.csv"
        bad_csv.write_text("t,speed,heading\n0.0,0.0,0.0\n0.5,0.01,0.0\n0.4,0.01,0.0\n")
        with pytest.raises(PipelineInputError, match="increasing"):
            ingest(bad_csv, input_files["fixes_path"],
                   input_files["floorplan_path"], input_files["registration_path"])

    def test_negative_accuracy(self, input_files, tmp_path):
        bad_csv = tmp_path / "bad_fixes.csv"
        bad_csv.write_text("t,x,y,accuracy\n0.0,1.0,1.0,-2.0\n")
        with pytest.raises(PipelineInputError, match=":2"):
            ingest(input_files["trajectory_path"], bad_csv,
                   input_files["floorplan_path"], input_files["registration_path"])

    def test_ok(self, input_files):
        traj, fixes, plan = ingest(
            input_files["trajectory_path"], input_files["fixes_path"],
            input_files["floorplan_path"], input_files["registration_path"])
        assert len(traj) > 1000
        assert len(fixes) == 7
        assert plan.width == 625


class TestRunPipeline:
    def test_oracle_outputs(self, input_files, tmp_path):
        out = tmp_path / "out"
        config = make_config(input_files, out)
        stages = run_pipeline(config)
        assert stages.order == ["opt_iter1", "flow_iter1", "opt_iter2", "flow_iter2"]
        assert (out / "positions.csv").is_file()
        assert (out / "solver_iter1.json").is_file()
        assert (out / "solver_iter2.json").is_file()
        report = json.loads((out / "report.json").read_text())
        assert set(report["errors"]) == set(stages.order)
        assert (out / "segments" / "iter1").is_dir() is False  # oracle writes no files
        series = read_positions_csv(out / "positions.csv")
        assert len(series) == len(stages.final)

    def test_determinism_byte_identical(self, input_files, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        run_pipeline(make_config(input_files, out_a))
        run_pipeline(make_config(input_files, out_b))
        assert (out_a / "positions.csv").read_bytes() == (out_b / "positions.csv").read_bytes()

    def test_backend_none_single_stage(self, input_files, tmp_path):
        out = tmp_path / "none"
        stages = run_pipeline(make_config(input_files, out, backend="none"))
        assert stages.order == ["opt_iter1"]

    def test_oracle_requires_gt(self, input_files, tmp_path):
        config = make_config(input_files, tmp_path / "x")
        config.gt_path = None
        with pytest.raises(FlowBackendError):
            run_pipeline(config)

    def test_iteration2_constraint_count(self, instance, open_plan, monkeypatch):
        bad, gt, fixes = instance
        captured = {}
        import floorloc.pipeline as pl

        real = pl.subsample_constraints

        def spy(series, stride, radius):
            out = real(series, stride, radius)
            captured["n"] = len(out)
            captured["stride"] = stride
            return out

        monkeypatch.setattr(pl, "subsample_constraints", spy)
        config = PipelineConfig(flow_backend="oracle", iterations=2,
                                self_constraint_stride=200)
        run_pipeline_in_memory(bad, fixes, open_plan, config, gt=gt)
        n_frames = len(bad)
        assert captured["n"] == (n_frames - 1) // 200 + 1

    def test_final_error_not_worse_than_optimization(self, instance, open_plan):
        from floorloc.evaluate import compute_errors, gt_points_from_series

        bad, gt, fixes = instance
        config = PipelineConfig(flow_backend="oracle", iterations=2)
        stages = run_pipeline_in_memory(bad, fixes, open_plan, config, gt=gt)
        pts = gt_points_from_series(gt)
        final = compute_errors(stages.final, pts).mean
        opt_only = compute_errors(stages.series["opt_iter1"], pts).mean
        assert final <= opt_only


FLOW_PRODUCER = r"""
import json, re, sys
from pathlib import Path
import numpy as np

directory = Path(sys.argv[1])
for path in sorted(directory.iterdir()):
    m = re.match(r"seg_(\d+)_input\.bin$", path.name)
    if not m:
        continue
    blob = path.read_bytes()
    header = blob[:256]
    image = np.frombuffer(blob[256:], dtype="<f4").reshape(6, 250, 250)
    mask = (image[3:6].sum(axis=0) > 0).astype(np.float32)
    flow = np.zeros((2, 250, 250), dtype=np.float32)
    out = header + np.concatenate([flow, mask[None]]).astype("<f4").tobytes()
    (directory / f"seg_{m.group(1)}_flow.bin").write_bytes(out)
"""


class TestExchangeBackend:
    def test_command_producer_runs(self, input_files, tmp_path):
        script = tmp_path / "producer.py"
        script.write_text(FLOW_PRODUCER)
        out = tmp_path / "ext"
        config = make_config(input_files, out, backend="external-exchange",
                             iterations=1,
                             flow_command=f"python3 {script} {{dir}}")
        stages = run_pipeline(config)
        assert stages.order == ["opt_iter1", "flow_iter1"]
        seg_dir = out / "segments" / "iter1"
        assert list(seg_dir.glob("seg_*_input.bin"))
        assert list(seg_dir.glob("seg_*_flow.bin"))
        # zero flow: refinement leaves the optimized series untouched
        assert np.allclose(stages.series["flow_iter1"].positions,
                           stages.series["opt_iter1"].positions)

    def test_poll_timeout(self, input_files, tmp_path):
        out = tmp_path / "timeout"
        config = make_config(input_files, out, backend="external-exchange",
                             iterations=1, flow_timeout_s=0.3,
                             flow_poll_interval_s=0.05)
        with pytest.raises(FlowBackendError, match="timed out"):
            run_pipeline(config)

    def test_failing_command(self, input_files, tmp_path):
        out = tmp_path / "fail"
        config = make_config(input_files, out, backend="external-exchange",
                             iterations=1, flow_command="false")
        with pytest.raises(FlowBackendError, match="failed"):
            run_pipeline(config)


class TestConfig:
    def test_from_json_round_trip(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({
            "trajectory_path": "t.csv",
            "fixes_path": "f.csv",
            "floorplan_path": "p.png",
            "registration_path": "r.json",
            "flow_backend": "none",
            "iterations": 1,
            "optimizer": {"w1": 20.0, "max_iterations": 50},
        }))
        config = PipelineConfig.from_json(cfg_path)
        assert config.optimizer.w1 == 20.0
        assert config.optimizer.max_iterations == 50
        assert config.flow_backend == "none"

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError, match="backend"):
            PipelineConfig(flow_backend="quantum")

    def test_unknown_key_rejected(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"no_such_field": 1}))
        with pytest.raises(PipelineInputError):
            PipelineConfig.from_json(cfg_path)


class TestCli:
    def test_run_exit_codes(self, input_files, tmp_path):
        cfg = {
            "trajectory_path": input_files["trajectory_path"],
            "fixes_path": input_files["fixes_path"],
            "floorplan_path": input_files["floorplan_path"],
            "registration_path": input_files["registration_path"],
            "gt_path": input_files["gt_path"],
            "output_dir": str(tmp_path / "cli_out"),
            "flow_backend": "oracle",
            "iterations": 1,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["run", "--config", str(cfg_path)]) == 0

        cfg["trajectory_path"] = "missing.csv"
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["run", "--config", str(cfg_path)]) == 2

        cfg["trajectory_path"] = input_files["trajectory_path"]
        cfg["flow_backend"] = "external-exchange"
        cfg["flow_timeout_s"] = 0.2
        cfg["flow_poll_interval_s"] = 0.05
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["run", "--config", str(cfg_path)]) == 4

    def test_synth_and_eval_round_trip(self, tmp_path, input_files):
        traj_csv = tmp_path / "s_traj.csv"
        gt_csv = tmp_path / "s_gt.csv"
        assert cli_main(["synth", "trajectory", "--out", str(traj_csv),
                         "--gt-out", str(gt_csv), "--seed", "3",
                         "--area", "80", "--n-waypoints", "6"]) == 0
        bad_csv = tmp_path / "s_bad.csv"
        assert cli_main(["synth", "corrupt", "--traj", str(traj_csv),
                         "--out", str(bad_csv), "--drift-deg-s", "0.5",
                         "--scale", "1.1"]) == 0
        fixes_csv = tmp_path / "s_fixes.csv"
        assert cli_main(["synth", "flp", "--gt", str(gt_csv), "--out",
                         str(fixes_csv), "--interval", "30", "--seed", "4"]) == 0
        report_json = tmp_path / "rep.json"
        assert cli_main(["eval", "--estimate", str(gt_csv), "--gt", str(gt_csv),
                         "--out", str(report_json)]) == 0
        rep = json.loads(report_json.read_text())
        assert rep["estimate"]["mean"] == 0.0

        samples_dir = tmp_path / "samples"
        assert cli_main(["synth", "samples", "--traj", str(bad_csv),
                         "--gt", str(gt_csv),
                         "--floorplan", input_files["floorplan_path"],
                         "--registration", input_files["registration_path"],
                         "--out", str(samples_dir), "--count", "2",
                         "--seed", "9"]) == 0
        assert len(list(samples_dir.glob("seg_*_input.bin"))) == 2
        assert len(list(samples_dir.glob("seg_*_target.bin"))) == 2

    def test_plot_writes_png(self, tmp_path, input_files):
        png = tmp_path / "fig.png"
        assert cli_main(["plot", "--positions", input_files["gt_path"],
                         "--floorplan", input_files["floorplan_path"],
                         "--registration", input_files["registration_path"],
                         "--out", str(png), "--gt", input_files["gt_path"]]) == 0
        assert png.stat().st_size > 1000
