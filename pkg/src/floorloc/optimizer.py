"""Geo-localization of an inertial trajectory by nonlinear least squares.

The problem: find per-knot scale and heading corrections plus a start
displacement so that the integrated trajectory passes near sparse position
fixes while staying close to the raw inertial motion. Fix residuals are
hinged (zero inside the fix's accuracy radius), scale corrections are pulled
toward 1 by max(s, 1/s), and heading corrections are smoothed by first- and
second-difference penalties.

The solver is a small Levenberg-Marquardt loop with an analytic Jacobian,
box bounds on the scale knots, and a deterministic accept/reject damping
schedule (start 1e-3, x10 on rejection, /10 on acceptance).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import (
    CorrectionParams,
    InertialTrajectory,
    PositionSeries,
    corrected_steps,
    integrate,
    interpolate_correction,
    knot_count,
)

LM_DAMPING_INIT = 1e-3
LM_DAMPING_MAX = 1e10
LM_DAMPING_MIN = 1e-12


@dataclass(frozen=True)
class FlpFix:
    """A timestamped 2D position with a reported accuracy radius."""

    t: float
    position: np.ndarray
    accuracy: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.accuracy < 0:
            raise ValueError("fix accuracy must be >= 0")


@dataclass
class OptimizerConfig:
    w1: float = 10.0  # scale-regularizer weight
    w2: float = 200.0  # angle-smoothness weight
    second_order_gain: float = 1.5
    scale_interval: float = 100.0
    angle_interval: float = 20.0
    scale_lower_bound: float = 0.1
    scale_upper_bound: float = 10.0
    max_iterations: int = 300
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("weights must be >= 0")
        if self.scale_interval <= 0 or self.angle_interval <= 0:
            raise ValueError("knot intervals must be > 0")
        if self.scale_lower_bound <= 0:
            raise ValueError("scale_lower_bound must be > 0")


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    cost_breakdown: dict
    converged: bool
    iteration_costs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "cost_breakdown": self.cost_breakdown,
            "converged": self.converged,
            "iteration_costs": self.iteration_costs,
        }

    def write_json(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        tmp.replace(path)


@dataclass
class SolveResult:
    params: CorrectionParams
    report: SolveReport


def match_fixes_to_frames(timestamps: np.ndarray, fixes: list[FlpFix]) -> np.ndarray:
    """Index of the temporally nearest frame per fix; ties go to the earlier frame."""
    ts = np.asarray(timestamps, dtype=float)
    ft = np.array([f.t for f in fixes], dtype=float)
    right = np.clip(np.searchsorted(ts, ft), 0, len(ts) - 1)
    left = np.clip(right - 1, 0, len(ts) - 1)
    d_left = np.abs(ft - ts[left])
    d_right = np.abs(ts[right] - ft)
    return np.where(d_left <= d_right, left, right)


def initial_alignment(positions: PositionSeries, fixes: list[FlpFix]) -> tuple[float, np.ndarray]:
    """Closed-form rigid alignment (rotation + translation, no scale) onto the fixes.

    Minimizes sum ||R p + t - q||^2 over the fix/frame correspondences. With a
    single fix the rotation falls back to 0 and only the translation is solved.
    """
    if not fixes:
        raise ValueError("initial alignment requires at least one fix")
    frames = match_fixes_to_frames(positions.timestamps, fixes)
    p = positions.positions[frames]
    q = np.array([f.position for f in fixes])
    if len(fixes) == 1:
        return 0.0, q[0] - p[0]
    p_bar, q_bar = p.mean(axis=0), q.mean(axis=0)
    a = (q - q_bar).T @ (p - p_bar)
    sin_term = a[1, 0] - a[0, 1]
    cos_term = a[0, 0] + a[1, 1]
    if abs(sin_term) < 1e-15 and abs(cos_term) < 1e-15:
        # coincident points: rotation unobservable, translate only
        rotation = 0.0
    else:
        rotation = float(np.arctan2(sin_term, cos_term))
    translation = q_bar - _rot(rotation) @ p_bar
    return rotation, translation


def rigid_initial_params(traj: InertialTrajectory, fixes: list[FlpFix],
                         config: OptimizerConfig) -> CorrectionParams:
    """Seed correction params from the rigid alignment.

    All angle knots take the alignment rotation, scale knots stay at 1, and
    the start offset places frame 0 on the transformed start.
    """
    raw = integrate(traj, CorrectionParams.identity(
        traj.duration, config.scale_interval, config.angle_interval))
    rotation, translation = initial_alignment(raw, fixes)
    start = _rot(rotation) @ raw.positions[0] + translation
    return CorrectionParams(
        scale_knots=np.ones(knot_count(traj.duration, config.scale_interval)),
        angle_knots=np.full(knot_count(traj.duration, config.angle_interval), rotation),
        start_offset=start,
        scale_interval=config.scale_interval,
        angle_interval=config.angle_interval,
    )


def _chord_observations(traj: InertialTrajectory, fixes: list[FlpFix]):
    """Per-fix-interval rotation/scale observations against the raw trajectory.

    Each consecutive fix pair contributes the angle from the raw-trajectory
    chord to the fix chord, the chord-length ratio, and a weight (the shorter
    chord length; short chords carry the noisiest angles).
    """
    raw = integrate(traj, CorrectionParams.identity(traj.duration))
    frames = match_fixes_to_frames(traj.timestamps, fixes)
    p = raw.positions[frames]
    q = np.array([f.position for f in fixes])
    ft = np.array([f.t for f in fixes])
    mids, rotations, ratios, weights = [], [], [], []
    for j in range(len(fixes) - 1):
        raw_chord = p[j + 1] - p[j]
        fix_chord = q[j + 1] - q[j]
        raw_len = np.linalg.norm(raw_chord)
        fix_len = np.linalg.norm(fix_chord)
        if raw_len < 1e-9 or fix_len < 1e-9:
            continue
        cross = raw_chord[0] * fix_chord[1] - raw_chord[1] * fix_chord[0]
        rotations.append(np.arctan2(cross, raw_chord @ fix_chord))
        ratios.append(fix_len / raw_len)
        weights.append(min(raw_len, fix_len))
        mids.append(0.5 * (ft[j] + ft[j + 1]))
    return (frames, q, np.array(mids), np.unwrap(np.array(rotations)),
            np.array(ratios), np.array(weights))


def initial_params(traj: InertialTrajectory, fixes: list[FlpFix],
                   config: OptimizerConfig) -> CorrectionParams:
    """Seed correction params for the solver.

    The rigid alignment alone cannot unbend a trajectory with large
    accumulated heading drift (a single rotation is the best it can do), and
    the solver then stalls in a local minimum. The heading-knot profile is
    therefore seeded from per-fix-interval chord rotations: the angle from
    each raw-trajectory chord to the matching fix chord, unwrapped over time
    and interpolated at the knot times. Scale knots start at 1 and the start
    offset pins frame 0 near the first fix. With fewer than two usable
    chords the seed falls back to the rigid alignment.
    """
    if len(fixes) < 3:
        return rigid_initial_params(traj, fixes, config)
    frames, q, mids, rotations, _, _ = _chord_observations(traj, fixes)
    if len(rotations) < 2:
        return rigid_initial_params(traj, fixes, config)
    n_angle = knot_count(traj.duration, config.angle_interval)
    knot_times = traj.timestamps[0] + np.arange(n_angle) * config.angle_interval
    params = CorrectionParams(
        scale_knots=np.ones(knot_count(traj.duration, config.scale_interval)),
        angle_knots=np.interp(knot_times, mids, rotations),
        start_offset=np.zeros(2),
        scale_interval=config.scale_interval,
        angle_interval=config.angle_interval,
    )
    seeded = integrate(traj, params)
    params.start_offset = q[0] - seeded.positions[frames[0]]
    return params


def fit_drift_model(traj: InertialTrajectory, fixes: list[FlpFix],
                    config: OptimizerConfig) -> CorrectionParams:
    """Low-dimensional drift estimate: constant scale, linear-in-time heading.

    Fits (start offset, scale, heading intercept, heading drift rate) to all
    fixes by damped Gauss-Newton, seeded from the chord observations. Six
    parameters against two coordinates per fix average the fix noise instead
    of chasing it, which a full knot grid would do. The result is expanded
    onto the configured knot grids.
    """
    frames, q, mids, rotations, ratios, weights = _chord_observations(traj, fixes)
    if len(rotations) < 2:
        return rigid_initial_params(traj, fixes, config)
    slope, intercept = np.polyfit(mids, rotations, 1, w=weights)
    order = np.argsort(ratios)
    cum = np.cumsum(weights[order])
    scale = float(ratios[order][np.searchsorted(cum, 0.5 * cum[-1])])
    scale = float(np.clip(scale, config.scale_lower_bound, config.scale_upper_bound))

    tau = traj.timestamps - traj.timestamps[0]
    s_eff = traj.speeds.copy()
    s_eff[0] = 0.0
    t_mid = np.array([f.t for f in fixes]).mean() - traj.timestamps[0]

    def positions(x):
        phi = traj.headings + x[3] + x[4] * (tau - t_mid)
        cos_p, sin_p = np.cos(phi), np.sin(phi)
        steps = (s_eff * x[2])[:, None] * np.column_stack([cos_p, sin_p])
        return np.cumsum(steps, axis=0)[frames] + x[:2], cos_p, sin_p

    # drift parameterized about the mean fix time to decorrelate it from the
    # intercept
    x = np.array([0.0, 0.0, scale, intercept + slope * t_mid, slope])
    pos, cos_p, sin_p = positions(x)
    x[:2] = (q - pos).mean(axis=0)
    pos = pos + x[:2]
    cost = float(((pos - q) ** 2).sum())
    lam = 1e-6
    for _ in range(50):
        jac = np.empty((len(fixes), 2, 5))
        jac[:, 0, :2] = [1.0, 0.0]
        jac[:, 1, :2] = [0.0, 1.0]
        jac[:, :, 2] = np.cumsum(s_eff[:, None] * np.column_stack([cos_p, sin_p]),
                                 axis=0)[frames]
        turn = np.column_stack([-sin_p, cos_p])
        jac[:, :, 3] = np.cumsum((s_eff * x[2])[:, None] * turn, axis=0)[frames]
        jac[:, :, 4] = np.cumsum((s_eff * x[2] * (tau - t_mid))[:, None] * turn,
                                 axis=0)[frames]
        j = jac.reshape(-1, 5)
        r = (pos - q).reshape(-1)
        g = j.T @ r
        h = j.T @ j
        try:
            step = np.linalg.solve(h + lam * np.diag(np.maximum(np.diag(h), 1e-12)), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        x_new = x + step
        x_new[2] = np.clip(x_new[2], config.scale_lower_bound, config.scale_upper_bound)
        pos_new, cos_new, sin_new = positions(x_new)
        cost_new = float(((pos_new - q) ** 2).sum())
        if cost_new < cost:
            improved = (cost - cost_new) > 1e-10 * max(cost, 1.0)
            x, pos, cos_p, sin_p, cost = x_new, pos_new, cos_new, sin_new, cost_new
            lam = max(lam / 10.0, 1e-12)
            if not improved:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break

    n_angle = knot_count(traj.duration, config.angle_interval)
    knot_tau = np.arange(n_angle) * config.angle_interval
    return CorrectionParams(
        scale_knots=np.full(knot_count(traj.duration, config.scale_interval), x[2]),
        angle_knots=x[3] + x[4] * (knot_tau - t_mid),
        start_offset=x[:2].copy(),
        scale_interval=config.scale_interval,
        angle_interval=config.angle_interval,
    )


def geolocate(traj: InertialTrajectory, fixes: list[FlpFix],
              config: OptimizerConfig = None) -> SolveResult:
    """Full geo-localization stage: drift-model estimate, then refinement.

    The refinement minimizes the hinge objective but stops once every fix
    sits inside its accuracy radius; past that point the data term is blind
    and unbounded descent only lets the regularizers pull the scale toward 1
    and the heading profile toward a constant, degrading a good estimate.
    """
    if not fixes:
        raise ValueError("geolocate requires at least one fix")
    fixes = sorted(fixes, key=lambda f: f.t)
    config = config or OptimizerConfig()
    init = fit_drift_model(traj, fixes, config)
    return solve(traj, fixes, config, init, stop_when_feasible=True)


def flp_residuals(positions: PositionSeries, fixes: list[FlpFix]) -> np.ndarray:
    """Hinge residual per fix: excess distance beyond the accuracy radius."""
    frames = match_fixes_to_frames(positions.timestamps, fixes)
    q = np.array([f.position for f in fixes])
    r = np.array([f.accuracy for f in fixes])
    d = np.linalg.norm(positions.positions[frames] - q, axis=1)
    return np.maximum(d - r, 0.0)


def scale_residuals(params: CorrectionParams, w1: float) -> np.ndarray:
    """sqrt(w1) * max(s, 1/s) per scale knot; squared sum is the paper-form penalty."""
    s = params.scale_knots
    if np.any(s <= 0):
        raise ValueError("scale knots must be > 0")
    return np.sqrt(w1) * np.maximum(s, 1.0 / s)


def angle_residuals(params: CorrectionParams, w2: float, gain: float) -> np.ndarray:
    """First- and second-difference residuals over the angle knots.

    Both blocks are vacuous when there are too few knots to form them.
    """
    a = params.angle_knots
    first = np.sqrt(w2) * np.diff(a) if len(a) >= 2 else np.zeros(0)
    second = (np.sqrt(w2 * gain) * (a[2:] - 2 * a[1:-1] + a[:-2])
              if len(a) >= 3 else np.zeros(0))
    return np.concatenate([first, second])


def _rot(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _weight_matrix(n_knots: int, interval: float, tau: np.ndarray) -> np.ndarray:
    """Dense (n_frames, n_knots) linear-interpolation weight matrix."""
    w = np.zeros((len(tau), n_knots))
    if n_knots == 1:
        w[:, 0] = 1.0
        return w
    u = np.clip(tau / interval, 0.0, n_knots - 1)
    lo = np.minimum(u.astype(int), n_knots - 2)
    frac = u - lo
    rows = np.arange(len(tau))
    w[rows, lo] = 1.0 - frac
    w[rows, lo + 1] += frac
    return w


class _Problem:
    """Least-squares residual/Jacobian evaluation for one solve.

    Parameter vector layout: [start_offset (2) | scale knots | angle knots].
    Residual layout: [flp hinge | scale reg | angle first diff | angle second diff].
    """

    def __init__(self, traj: InertialTrajectory, fixes: list[FlpFix],
                 config: OptimizerConfig):
        self.traj = traj
        self.fixes = fixes
        self.config = config
        self.n_scale = knot_count(traj.duration, config.scale_interval)
        self.n_angle = knot_count(traj.duration, config.angle_interval)
        self.frames = match_fixes_to_frames(traj.timestamps, fixes)
        self.fix_pos = np.array([f.position for f in fixes])
        self.fix_acc = np.array([f.accuracy for f in fixes])
        tau = traj.timestamps - traj.timestamps[0]
        self.w_scale = _weight_matrix(self.n_scale, config.scale_interval, tau)
        self.w_angle = _weight_matrix(self.n_angle, config.angle_interval, tau)
        self.s_eff = traj.speeds.copy()
        self.s_eff[0] = 0.0  # frame 0 anchors the series
        self.tau = tau
        # cumulative sums are only ever read at the fix frames
        self._uframes, self._uinverse = np.unique(self.frames, return_inverse=True)

    def _cum_at_fixes(self, cols: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Cumulative sums of cols (or cols[:, None] * weights) at the fix frames."""
        width = weights.shape[1] if weights is not None else cols.shape[1]
        out = np.empty((len(self._uframes), width))
        acc = np.zeros(width)
        start = 0
        for i, f in enumerate(self._uframes):
            stop = int(f) + 1
            if weights is not None:
                acc = acc + cols[start:stop] @ weights[start:stop]
            else:
                acc = acc + cols[start:stop].sum(axis=0)
            out[i] = acc
            start = stop
        return out[self._uinverse]

    @property
    def n_params(self) -> int:
        return 2 + self.n_scale + self.n_angle

    def pack(self, params: CorrectionParams) -> np.ndarray:
        return np.concatenate([params.start_offset, params.scale_knots, params.angle_knots])

    def unpack(self, x: np.ndarray) -> CorrectionParams:
        return CorrectionParams(
            scale_knots=x[2:2 + self.n_scale].copy(),
            angle_knots=x[2 + self.n_scale:].copy(),
            start_offset=x[:2].copy(),
            scale_interval=self.config.scale_interval,
            angle_interval=self.config.angle_interval,
        )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb = np.full(self.n_params, -np.inf)
        ub = np.full(self.n_params, np.inf)
        lb[2:2 + self.n_scale] = self.config.scale_lower_bound
        ub[2:2 + self.n_scale] = self.config.scale_upper_bound
        return lb, ub

    def _positions_at_fixes(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        params = self.unpack(x)
        ds = self.w_scale @ params.scale_knots
        dth = self.w_angle @ params.angle_knots
        phi = self.traj.headings + dth
        cos_p, sin_p = np.cos(phi), np.sin(phi)
        steps = (self.s_eff * ds)[:, None] * np.column_stack([cos_p, sin_p])
        pos = params.start_offset + self._cum_at_fixes(steps)
        cache = {"params": params, "ds": ds, "cos": cos_p, "sin": sin_p}
        return pos, cache

    def residuals(self, x: np.ndarray, split: bool = False):
        pos_f, cache = self._positions_at_fixes(x)
        d = np.linalg.norm(pos_f - self.fix_pos, axis=1)
        r_flp = np.maximum(d - self.fix_acc, 0.0)
        r_scale = scale_residuals(cache["params"], self.config.w1)
        r_angle = angle_residuals(cache["params"], self.config.w2,
                                  self.config.second_order_gain)
        if split:
            return r_flp, r_scale, r_angle
        return np.concatenate([r_flp, r_scale, r_angle])

    def cost_breakdown(self, x: np.ndarray) -> dict:
        r_flp, r_scale, r_angle = self.residuals(x, split=True)
        return {
            "flp": float(r_flp @ r_flp),
            "scale": float(r_scale @ r_scale),
            "angle": float(r_angle @ r_angle),
        }

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Analytic Jacobian; hinge and max(s, 1/s) kinks use branch derivatives."""
        pos_f, cache = self._positions_at_fixes(x)
        params, ds = cache["params"], cache["ds"]
        cos_p, sin_p = cache["cos"], cache["sin"]
        n_fix = len(self.fixes)
        n_s, n_a = self.n_scale, self.n_angle
        jac = np.zeros((n_fix + n_s + max(n_a - 1, 0) + max(n_a - 2, 0), self.n_params))

        # fix block: d residual / d position, then position sensitivities
        diff = pos_f - self.fix_pos
        d = np.linalg.norm(diff, axis=1)
        active = d > self.fix_acc
        safe_d = np.where(d > 0, d, 1.0)
        u = np.where(active[:, None], diff / safe_d[:, None], 0.0)

        # dP/d scale knot: cumulative s * weight along the corrected heading
        d_px_ds = self._cum_at_fixes(self.s_eff * cos_p, self.w_scale)
        d_py_ds = self._cum_at_fixes(self.s_eff * sin_p, self.w_scale)
        # dP/d angle knot: rotate each step 90 degrees, scale by s * ds * weight
        d_px_da = self._cum_at_fixes(-self.s_eff * ds * sin_p, self.w_angle)
        d_py_da = self._cum_at_fixes(self.s_eff * ds * cos_p, self.w_angle)

        jac[:n_fix, 0] = u[:, 0]
        jac[:n_fix, 1] = u[:, 1]
        jac[:n_fix, 2:2 + n_s] = u[:, 0:1] * d_px_ds + u[:, 1:2] * d_py_ds
        jac[:n_fix, 2 + n_s:] = u[:, 0:1] * d_px_da + u[:, 1:2] * d_py_da

        # scale regularizer: sqrt(w1) * d max(s, 1/s) / ds
        s = params.scale_knots
        grad = np.where(s >= 1.0, 1.0, -1.0 / (s * s)) * np.sqrt(self.config.w1)
        rows = np.arange(n_s)
        jac[n_fix + rows, 2 + rows] = grad

        # angle first differences
        base = n_fix + n_s
        sqrt_w2 = np.sqrt(self.config.w2)
        for k in range(n_a - 1):
            jac[base + k, 2 + n_s + k] = -sqrt_w2
            jac[base + k, 2 + n_s + k + 1] = sqrt_w2
        # angle second differences
        base += max(n_a - 1, 0)
        sqrt_w2g = np.sqrt(self.config.w2 * self.config.second_order_gain)
        for k in range(n_a - 2):
            jac[base + k, 2 + n_s + k] = sqrt_w2g
            jac[base + k, 2 + n_s + k + 1] = -2.0 * sqrt_w2g
            jac[base + k, 2 + n_s + k + 2] = sqrt_w2g
        return jac


def solve(traj: InertialTrajectory, fixes: list[FlpFix], config: OptimizerConfig = None,
          init: CorrectionParams = None, stop_when_feasible: bool = False) -> SolveResult:
    """Levenberg-Marquardt minimization of the stacked residual vector.

    Deterministic given inputs; the returned report carries per-iteration
    accepted costs (non-increasing by construction) and a convergence flag.

    With ``stop_when_feasible`` the iteration halts as soon as an accepted
    iterate drives the whole fix block to zero (every fix inside its accuracy
    radius). Inside that plateau the data term carries no information and
    further descent only lets the regularizers drag the estimate around, so
    stopping there keeps the initialization's information (early stopping as
    regularization). Full minimization is the default.
    """
    if not fixes:
        raise ValueError("solve requires at least one fix")
    fixes = sorted(fixes, key=lambda f: f.t)
    config = config or OptimizerConfig()
    if init is None:
        init = initial_params(traj, fixes, config)
    if not init.covers(traj.duration):
        raise ValueError("initial params do not cover the trajectory duration")

    problem = _Problem(traj, fixes, config)
    lb, ub = problem.bounds()
    x = np.clip(problem.pack(init), lb, ub)
    r = problem.residuals(x)
    cost = float(r @ r)
    initial_cost = cost
    costs = [cost]
    lam = LM_DAMPING_INIT
    converged = False
    iterations = 0

    def flp_satisfied(vec: np.ndarray) -> bool:
        return not np.any(vec[:len(fixes)])

    if stop_when_feasible and flp_satisfied(r):
        converged = True
    else:
        for iterations in range(1, config.max_iterations + 1):
            jac = problem.jacobian(x)
            g = jac.T @ r
            if np.max(np.abs(g)) < config.convergence_tol:
                converged = True
                break
            jtj = jac.T @ jac
            diag = np.maximum(np.diag(jtj), 1e-12)
            accepted = False
            while lam <= LM_DAMPING_MAX:
                try:
                    step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                x_new = np.clip(x + step, lb, ub)
                r_new = problem.residuals(x_new)
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    rel_decrease = (cost - cost_new) / max(cost, 1e-300)
                    x, r, cost = x_new, r_new, cost_new
                    costs.append(cost)
                    lam = max(lam / 10.0, LM_DAMPING_MIN)
                    accepted = True
                    if rel_decrease < config.convergence_tol:
                        converged = True
                    break
                lam *= 10.0
            if not accepted:
                # no damping produces a decrease: local minimum within float precision
                converged = np.max(np.abs(g)) < np.sqrt(config.convergence_tol)
                break
            if converged or (stop_when_feasible and flp_satisfied(r)):
                converged = True
                break

    report = SolveReport(
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        cost_breakdown=problem.cost_breakdown(x),
        converged=bool(converged),
        iteration_costs=[float(c) for c in costs],
    )
    return SolveResult(params=problem.unpack(x), report=report)


def corrected_positions(traj: InertialTrajectory, result: SolveResult) -> PositionSeries:
    return integrate(traj, result.params)


def read_fixes_csv(path) -> list[FlpFix]:
    """Read a fix CSV with header ``t,x,y,accuracy``."""
    path = Path(path)
    fixes = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("t", "x", "y", "accuracy"):
            raise ValueError(f"{path}: expected header t,x,y,accuracy")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                t, x, y, acc = (float(v) for v in row)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {row}") from None
            if acc < 0:
                raise ValueError(f"{path}:{lineno}: negative accuracy {acc}")
            fixes.append(FlpFix(t=t, position=np.array([x, y]), accuracy=acc))
    if not fixes:
        raise ValueError(f"{path}: no fixes")
    return fixes


def write_fixes_csv(path, fixes: list[FlpFix]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "x", "y", "accuracy"))
        for f in fixes:
            writer.writerow([f"{f.t:.9f}", f"{f.position[0]:.9f}",
                             f"{f.position[1]:.9f}", f"{f.accuracy:.9f}"])
    tmp.replace(path)
