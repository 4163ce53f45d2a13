import numpy as np
import pytest

from floorloc.trajectory import (
    CorrectionParams,
    InertialTrajectory,
    PositionSeries,
    integrate,
    interpolate_correction,
    knot_count,
    read_positions_csv,
    read_trajectory_csv,
    subsample_constraints,
    write_positions_csv,
    write_trajectory_csv,
)


def straight_traj(n_steps=10, step=1.0, heading=0.0, dt=1.0):
    """n_steps unit displacements after the anchor frame."""
    n = n_steps + 1
    return InertialTrajectory(
        timestamps=dt * np.arange(n),
        speeds=np.concatenate([[0.0], np.full(n_steps, step)]),
        headings=np.full(n, heading),
    )


def test_interpolation_hits_knots():
    knots = np.array([1.0, 3.0, -2.0])
    for k, v in enumerate(knots):
        assert interpolate_correction(knots, 100.0, 100.0 * k) == pytest.approx(v)


def test_interpolation_midpoint():
    assert interpolate_correction(np.array([1.0, 2.0]), 100.0, 50.0) == pytest.approx(1.5)


def test_interpolation_clamps_past_end():
    knots = np.array([1.0, 2.0])
    assert interpolate_correction(knots, 100.0, 500.0) == pytest.approx(2.0)


def test_interpolation_empty_rejected():
    with pytest.raises(ValueError):
        interpolate_correction(np.array([]), 100.0, 0.0)


def test_interpolation_piecewise_linear_second_difference():
    rng = np.random.default_rng(3)
    knots = rng.normal(size=8)
    interval = 20.0
    for k in range(7):
        t = np.linspace(k * interval, (k + 1) * interval, 11)
        vals = np.array([interpolate_correction(knots, interval, ti) for ti in t])
        second = np.diff(vals, 2)
        assert np.max(np.abs(second)) < 1e-12


def test_integrate_identity_straight_line():
    traj = straight_traj(10)
    series = integrate(traj, CorrectionParams.identity(traj.duration))
    assert np.allclose(series.positions[0], [0.0, 0.0])
    expected = np.column_stack([np.arange(11.0), np.zeros(11)])
    assert np.allclose(series.positions, expected)
    # the moving frames land on (1,0)..(10,0)
    assert np.allclose(series.positions[1:], np.column_stack([np.arange(1, 11.0), np.zeros(10)]))


def test_integrate_quarter_turn_correction():
    traj = straight_traj(10)
    params = CorrectionParams.identity(traj.duration)
    params.angle_knots[:] = np.pi / 2.0
    series = integrate(traj, params)
    assert np.allclose(series.positions[1:, 0], 0.0, atol=1e-12)
    assert np.allclose(series.positions[1:, 1], np.arange(1, 11.0))


def test_integrate_double_scale():
    traj = straight_traj(10)
    params = CorrectionParams.identity(traj.duration)
    params.scale_knots[:] = 2.0
    series = integrate(traj, params)
    assert np.allclose(series.positions[1:, 0], 2.0 * np.arange(1, 11.0))


def test_integrate_matches_uncorrected_sum():
    rng = np.random.default_rng(4)
    n = 200
    traj = InertialTrajectory(
        timestamps=0.02 * np.arange(n),
        speeds=np.concatenate([[0.0], rng.uniform(0, 0.05, n - 1)]),
        headings=rng.uniform(-np.pi, np.pi, n),
    )
    series = integrate(traj, CorrectionParams.identity(traj.duration))
    manual = np.cumsum(
        traj.speeds[1:, None] * np.column_stack([np.cos(traj.headings[1:]),
                                                 np.sin(traj.headings[1:])]), axis=0)
    assert np.allclose(series.positions[1:], manual)
    assert np.allclose(series.positions[0], 0.0)


def test_integrate_rotation_equivariance():
    rng = np.random.default_rng(5)
    n = 150
    traj = InertialTrajectory(
        timestamps=0.1 * np.arange(n),
        speeds=np.concatenate([[0.0], rng.uniform(0, 0.1, n - 1)]),
        headings=rng.uniform(-np.pi, np.pi, n),
    )
    params = CorrectionParams.identity(traj.duration)
    params.angle_knots = rng.normal(0, 0.2, len(params.angle_knots))
    params.start_offset = np.array([3.0, -1.0])
    base = integrate(traj, params)
    c = 0.7
    rotated = params.copy()
    rotated.angle_knots = params.angle_knots + c
    out = integrate(traj, rotated)
    rot = np.array([[np.cos(c), -np.sin(c)], [np.sin(c), np.cos(c)]])
    expected = (base.positions - params.start_offset) @ rot.T + params.start_offset
    assert np.max(np.abs(out.positions - expected)) < 1e-9


def test_path_length_independent_of_angles():
    rng = np.random.default_rng(6)
    n = 100
    traj = InertialTrajectory(
        timestamps=0.5 * np.arange(n),
        speeds=np.concatenate([[0.0], rng.uniform(0.01, 0.1, n - 1)]),
        headings=rng.uniform(-np.pi, np.pi, n),
    )
    params = CorrectionParams.identity(traj.duration)
    params.scale_knots = rng.uniform(0.5, 2.0, len(params.scale_knots))
    lengths = []
    for shift in (0.0, 0.5, -1.2):
        p = params.copy()
        p.angle_knots = p.angle_knots + shift
        series = integrate(traj, p)
        lengths.append(np.sum(np.linalg.norm(np.diff(series.positions, axis=0), axis=1)))
    assert np.allclose(lengths, lengths[0])


def test_knot_count_covers_duration():
    assert knot_count(600.0, 100.0) == 7
    assert knot_count(610.0, 100.0) == 8
    assert knot_count(0.0, 100.0) == 1
    params = CorrectionParams.identity(600.0)
    assert len(params.scale_knots) == 7
    assert len(params.angle_knots) == 31


def test_identity_element():
    params = CorrectionParams.identity(100.0)
    assert np.all(params.scale_knots == 1.0)
    assert np.all(params.angle_knots == 0.0)
    assert np.all(params.start_offset == 0.0)


def test_scale_knots_must_be_positive():
    with pytest.raises(ValueError):
        CorrectionParams(scale_knots=np.array([1.0, 0.0]), angle_knots=np.zeros(2))


def test_subsample_stride():
    n = 1000
    series = PositionSeries(timestamps=0.02 * np.arange(n),
                            positions=np.column_stack([np.arange(n, dtype=float),
                                                       np.zeros(n)]))
    fixes = subsample_constraints(series, 200, 3.0)
    assert len(fixes) == 5
    assert [f.t for f in fixes] == pytest.approx([0.0, 4.0, 8.0, 12.0, 16.0])
    assert all(f.accuracy == 3.0 for f in fixes)


def test_subsample_stride_one_and_degenerate():
    series = PositionSeries(timestamps=np.arange(5.0),
                            positions=np.zeros((5, 2)))
    assert len(subsample_constraints(series, 1, 1.0)) == 5
    assert len(subsample_constraints(series, 99, 1.0)) == 1


def test_subsample_invalid():
    series = PositionSeries(timestamps=np.arange(3.0), positions=np.zeros((3, 2)))
    with pytest.raises(ValueError):
        subsample_constraints(series, 0, 1.0)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        InertialTrajectory(np.array([0.0, 0.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        InertialTrajectory(np.array([0.0, 1.0]), np.array([0.0, -1.0]), np.zeros(2))
    with pytest.raises(ValueError):
        InertialTrajectory(np.array([0.0]), np.zeros(2), np.zeros(2))


def test_csv_round_trips(tmp_path):
    traj = straight_traj(5)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    loaded = read_trajectory_csv(path)
    assert np.allclose(loaded.timestamps, traj.timestamps)
    assert np.allclose(loaded.speeds, traj.speeds)

    series = integrate(traj, CorrectionParams.identity(traj.duration))
    ppath = tmp_path / "pos.csv"
    write_positions_csv(ppath, series)
    loaded_series = read_positions_csv(ppath)
    assert np.allclose(loaded_series.positions, series.positions)


def test_csv_error_has_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,speed,heading\n0.0,0.0,0.0\n1.0,oops,0.0\n")
    with pytest.raises(ValueError, match=":3"):
        read_trajectory_csv(path)
