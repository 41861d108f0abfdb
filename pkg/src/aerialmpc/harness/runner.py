"""Closed-loop experiment loop, scripted data collection, and the CSV log formats.

Log files start with one comment line ``# <kind> v1 config=<digest>`` followed by a header
row. Floats are written with ``repr`` so a log parses back to bit-identical values. Wall-clock
solver timings go to a ``.timing.csv`` sidecar so the main log stays byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import kinematics as kin
from ..model import JOINT, JOINT_RATE, NX, POS, POS_DES, VEL, VEL_DES, build_discrete_model, \
    build_integral_model
from ..mpc import Measurement, PredictiveController, SolverError
from ..plant import Plant, PlantCommand, PlantDivergence, PlantState
from ..residual import OnlineResidual, assemble_features, load_params, residual_target
from .config import ExperimentConfig
from .metrics import RunMetrics, compute_metrics
from .trajectories import clover_trajectory, linear_target_trajectory, moving_target_trajectory

LOG_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_ARTIFACT = 4
EXIT_DIVERGED = 5
EXIT_SOLVER = 6

# fraction of non-converged QP cycles above which a run is reported as a solver failure
SOLVER_FAILURE_FRACTION = 0.05


class MissingArtifact(FileNotFoundError):
    pass


def _names(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


AXES = ("x", "y", "z")
FEATURE_COLUMNS = (["phi", "theta", "psi"] + [f"v_{a}" for a in AXES] + [f"w_{a}" for a in AXES]
                   + _names("q", 6) + _names("qd", 6) + _names("u", 9))
TARGET_COLUMNS = [f"delta_{a}" for a in AXES]
DATASET_COLUMNS = (["t", "stage"] + FEATURE_COLUMNS + TARGET_COLUMNS + [f"pb_{a}" for a in AXES]
                   + [f"pbprev_{a}" for a in AXES] + [f"pbd_{a}" for a in AXES]
                   + [f"peb_{a}" for a in AXES])

LOG_COLUMNS = (
    ["t"] + [f"pb_{a}" for a in AXES] + [f"pbprev_{a}" for a in AXES] + [f"vb_{a}" for a in AXES]
    + ["phi", "theta", "psi"]
    + [f"w_{a}" for a in AXES] + _names("q", 6) + _names("qd", 6)
    + [f"pbd_{a}" for a in AXES] + [f"vbd_{a}" for a in AXES] + _names("qdes", 6) + _names("qdotdes", 6)
    + [f"pe_{a}" for a in AXES] + [f"ped_{a}" for a in AXES] + ["error", "gamma", "mode", "d_e", "d_o"]
    + [f"dhat_{a}" for a in AXES] + [f"dtgt_{a}" for a in AXES] + _names("u", 9)
    + ["J1", "J2", "J3", "J4", "iterations", "converged"]
)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


class CsvLog:
    def __init__(self, path, kind: str, digest: str, columns):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="", encoding="utf-8")
        self._fh.write(f"# {kind} v{LOG_VERSION} config={digest}\n")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(columns)
        self.n = len(columns)

    def write(self, values):
        row = [_fmt(v) for v in values]
        assert len(row) == self.n
        self._writer.writerow(row)

    def close(self):
        self._fh.close()


def read_log(path) -> tuple[str, dict[str, np.ndarray | list]]:
    """Parse a log or dataset CSV into columns; the ``mode`` column stays as strings."""
    with Path(path).open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise ValueError(f"{path}: missing version comment line")
        reader = csv.reader(fh)
        columns = next(reader)
        rows = list(reader)
    data = {}
    for j, name in enumerate(columns):
        col = [r[j] for r in rows]
        data[name] = col if name == "mode" else np.array([float(x) for x in col])
    return header, data


# --------------------------------------------------------------------------------------------
# scenarios


def reference_function(cfg: ExperimentConfig):
    sc = cfg.scenarios
    if cfg.scenario == "clover":
        c = sc["clover"]
        return lambda t: clover_trajectory(t, c["scale"], c["period"], c["center"])
    if cfg.scenario == "moving_target":
        m = sc["moving_target"]
        return lambda t: moving_target_trajectory(t, m["start"], m["velocity"], m["height"])
    if cfg.scenario == "custom":
        m = sc["custom"]
        return lambda t: linear_target_trajectory(t, m["start"], m["velocity"], d_g=m["d_g"])
    raise ValueError(f"scenario {cfg.scenario!r} has no closed-loop reference")


def initial_end_effector(cfg: ExperimentConfig, ref) -> np.ndarray:
    if cfg.scenario == "clover":
        return ref(0.0).p.copy()
    return np.asarray(cfg.scenarios[cfg.scenario]["ee_start"], float)


def build_controller(cfg: ExperimentConfig) -> PredictiveController:
    residual = None
    if cfg.variant == "integral-baseline":
        model = build_integral_model(cfg.dt)
    else:
        model = build_discrete_model(cfg.k_b, cfg.dt)
    if cfg.variant == "modified+residual":
        if not cfg.model_path.exists():
            raise MissingArtifact(f"residual model artifact not found: {cfg.model_path}")
        residual = OnlineResidual(load_params(cfg.model_path), lr=cfg.residual.lr_online,
                                  batch=cfg.residual.online_batch)
    return PredictiveController(cfg.geometry, model, cfg.mpc, cfg.allocation, residual, k_b=cfg.k_b)


@dataclass
class RunResult:
    metrics: RunMetrics
    log_path: Path
    exit_code: int
    message: str = ""


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def run_experiment(cfg: ExperimentConfig, output=None) -> RunResult:
    """Step plant and controller in lockstep at the control rate for ``cfg.duration`` seconds.

    Every cycle: measure, build the model state from the measurement and the controller's
    double-integrated references, solve, log, integrate the command into new references, and
    advance the plant one period.
    """
    out = Path(output or cfg.output)
    ref = reference_function(cfg)
    ctrl = build_controller(cfg)
    geo, dt = cfg.geometry, cfg.dt

    p_eb0 = kin.fk_manipulator(cfg.q_home, geo)
    p_b0 = initial_end_effector(cfg, ref) - p_eb0
    plant = Plant(cfg.plant, geo, PlantState.at_rest(p_b0, cfg.q_home), control_dt=dt)
    p_des, v_des = p_b0.copy(), np.zeros(3)
    q_des, qd_des = cfg.q_home.copy(), np.zeros(6)
    u_prev = np.zeros(9)
    p_prev = p_b0.copy()

    log = CsvLog(out, "aerialmpc-log", cfg.digest, LOG_COLUMNS)
    timing = []
    times, errors, gammas, modes = [], [], [], []
    n_cycles = int(math.floor(cfg.duration / dt + 1e-9))
    exit_code, message = EXIT_OK, ""
    n_unconverged = 0
    try:
        for k in range(n_cycles):
            t = k * dt
            s = plant.state
            pose, joints = s.pose(), s.joints()
            x_hat = np.zeros(NX)
            x_hat[POS], x_hat[VEL] = s.p, s.v
            x_hat[POS_DES], x_hat[VEL_DES] = p_des, v_des
            x_hat[JOINT], x_hat[JOINT_RATE] = q_des, qd_des
            refs = [ref(t + i * dt) for i in range(cfg.mpc.horizon + 1)]
            cmd = ctrl.step(Measurement(pose, joints, x_hat, u_prev), refs)
            n_unconverged += not cmd.converged

            p_e = kin.end_effector_position(pose, s.q, geo)
            err = float(np.linalg.norm(p_e - refs[0].p))
            d_tgt = residual_target(s.v, p_des, p_prev, cfg.k_b)
            u = cmd.u
            row = ([t], s.p, p_prev, s.v, s.euler, pose.omega, s.q, s.qd, p_des, v_des, q_des, qd_des, p_e,
                   refs[0].p, [err, cmd.gamma, cmd.mode.value, cmd.d_e, cmd.d_o], cmd.delta_hat, d_tgt,
                   u, cmd.costs, [cmd.iterations, cmd.converged])
            values = [v for part in row for v in (part if not isinstance(part, np.ndarray) else part.tolist())]
            log.write(values)
            timing.append(cmd.solve_time)
            times.append(t)
            errors.append(err)
            gammas.append(cmd.gamma)
            modes.append(cmd.mode.value)

            plant.step(PlantCommand(p_des.copy(), v_des.copy(), u[:3].copy(), q_des.copy(),
                                    qd_des.copy(), u[3:].copy()))
            p_des = p_des + v_des * dt + 0.5 * u[:3] * dt * dt
            v_des = v_des + u[:3] * dt
            q_des = q_des + qd_des * dt + 0.5 * u[3:] * dt * dt
            qd_des = qd_des + u[3:] * dt
            u_prev = u
            p_prev = s.p.copy()
    except PlantDivergence as exc:
        exit_code, message = EXIT_DIVERGED, str(exc)
    except SolverError as exc:
        exit_code, message = EXIT_SOLVER, str(exc)
    finally:
        log.close()

    metrics = compute_metrics(times, errors, gammas, modes, timing, cfg.stable_threshold, cfg.stable_hold)
    if exit_code == EXIT_OK and times and n_unconverged > SOLVER_FAILURE_FRACTION * len(times):
        exit_code, message = EXIT_SOLVER, f"{n_unconverged} of {len(times)} QP solves did not converge"
    if exit_code == EXIT_DIVERGED:
        metrics.status = "diverged"
    elif exit_code == EXIT_SOLVER:
        metrics.status = "solver_failure"
    _write_timing(_sidecar(out, ".timing.csv"), times, timing)
    _sidecar(out, ".metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    return RunResult(metrics=metrics, log_path=out, exit_code=exit_code, message=message)


def _write_timing(path: Path, times, timing):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "solve_time"])
        for t, s in zip(times, timing):
            w.writerow([repr(float(t)), repr(float(s))])


def metrics_from_log(path, threshold: float = 0.05, hold: float = 2.0) -> RunMetrics:
    """Recompute run metrics from a log (and its timing sidecar when present)."""
    path = Path(path)
    _, data = read_log(path)
    solve = None
    side = _sidecar(path, ".timing.csv")
    if side.exists():
        with side.open(encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        solve = [float(r[1]) for r in rows]
    m = compute_metrics(data["t"], data["error"], data["gamma"], data["mode"], solve, threshold, hold)
    if len(data["t"]):
        conv = data["converged"]
        if np.sum(conv == 0) > SOLVER_FAILURE_FRACTION * len(conv):
            m.status = "solver_failure"
    return m


# --------------------------------------------------------------------------------------------
# data collection


def quad_circle(t, center, radius, speed, incline):
    """Circle of ``radius`` traversed at ``speed`` in a plane tilted by ``incline`` about x."""
    if speed == 0:
        return np.asarray(center, float).copy(), np.zeros(3), np.zeros(3)
    w = speed / radius
    c, s = np.cos(w * t), np.sin(w * t)
    ci, si = np.cos(incline), np.sin(incline)
    shape = np.array([c - 1.0, s * ci, s * si])
    dshape = np.array([-s, c * ci, c * si]) * w
    ddshape = np.array([-c, -s * ci, -s * si]) * w * w
    return np.asarray(center, float) + radius * shape, radius * dshape, radius * ddshape


def figure_eight(t, center, half_extent, period):
    """3D figure-eight (lemniscate of Gerono in x-y with a z swing) in the body frame."""
    w = 2 * np.pi / period
    hx, hy, hz = half_extent
    p = np.asarray(center, float) + np.array([hx * np.sin(w * t), hy * np.sin(2 * w * t), hz * np.cos(w * t)])
    v = np.array([hx * w * np.cos(w * t), 2 * hy * w * np.cos(2 * w * t), -hz * w * np.sin(w * t)])
    return p, v


def _ik_rate(q, p_target, v_target, geo, q_home, gain=10.0, null_gain=1.0, damping=1e-3):
    J = kin.jacobian_manipulator(q, geo)
    err = p_target - kin.fk_manipulator(q, geo)
    JJt = J @ J.T + damping * np.eye(3)
    J_pinv = J.T @ np.linalg.inv(JJt)
    null = np.eye(6) - J_pinv @ J
    return J_pinv @ (v_target + gain * err) + null @ (null_gain * (q_home - q))


def collect_dataset(cfg: ExperimentConfig, output, stages=None) -> int:
    """Scripted open-loop data collection; writes the dataset CSV and returns its row count.

    ``stages`` is a list of ``(ee_period, quad_speed, duration)``; by default it comes from the
    ``[collect]`` section. On divergence the partial file is removed and the error re-raised.
    """
    cs = cfg.collect
    if stages is None:
        stages = [(float(p), float(s), cs.stage_duration) for p, s in zip(cs.ee_periods, cs.quad_speeds)]
    out = Path(output)
    geo, dt = cfg.geometry, cfg.dt
    p_o = cfg.mpc.p_o_body
    log = CsvLog(out, "aerialmpc-dataset", cfg.digest, DATASET_COLUMNS)
    rows = 0
    try:
        t_global = 0.0
        state = PlantState.at_rest(cs.center, cfg.q_home)
        plant = Plant(cfg.plant, geo, state, control_dt=dt)
        for idx, (ee_period, speed, duration) in enumerate(stages):
            q_des, qd_des = plant.state.q.copy(), np.zeros(6)
            center = plant.state.p.copy()
            u_prev = np.zeros(9)
            p_prev = plant.state.p.copy()
            for k in range(int(round(duration / dt))):
                t = k * dt
                s = plant.state
                p_des, v_des, a_des = quad_circle(t, center, cs.circle_radius, speed, cs.circle_incline)
                pose = s.pose()
                feats = assemble_features(s.euler, s.v, pose.omega, s.q, s.qd, u_prev)
                target = residual_target(s.v, p_des, p_prev, cfg.k_b)
                p_eb = kin.fk_manipulator(s.q, geo)
                log.write([t_global + t, idx, *feats, *target, *s.p, *p_prev, *p_des, *p_eb])
                rows += 1

                p_tgt, v_tgt = figure_eight(t + dt, p_o, cs.ee_half_extent, ee_period)
                q_next_guess = q_des + qd_des * dt
                qd_target = _ik_rate(q_next_guess, p_tgt, v_tgt, geo, cfg.q_home)
                qdd = (qd_target - qd_des) / dt
                plant.step(PlantCommand(p_des, v_des, a_des, q_des.copy(), qd_des.copy(), qdd))
                q_des = q_des + qd_des * dt + 0.5 * qdd * dt * dt
                qd_des = qd_target
                u_prev = np.concatenate([a_des, qdd])
                p_prev = s.p.copy()
            t_global += duration
    except BaseException:
        log.close()
        out.unlink(missing_ok=True)
        raise
    log.close()
    return rows


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    _, data = read_log(path)
    X = np.column_stack([data[c] for c in FEATURE_COLUMNS])
    Y = np.column_stack([data[c] for c in TARGET_COLUMNS])
    return X, Y
