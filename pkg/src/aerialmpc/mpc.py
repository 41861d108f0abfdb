"""Weight-allocated MPC on the modified kinematic model.

Each cycle freezes the Jacobians, the roll/pitch rates and the learning-space linearization
at the current measurement, which turns the four-term objective into a convex quadratic in
the stacked inputs ``U = [u_0, ..., u_{N-1}]``. State bounds are soft (quadratic penalty on
violations); input bounds are hard.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .allocation import AllocationParams, AllocationState, Mode, allocate
from .model import (JOINT, JOINT_RATE, NU, NX, POS, POS_DES, VEL, VEL_DES, DiscreteModel,
                    residual_embedding)
from .qp import QpResult, solve_box_qp
from .residual import OnlineResidual, assemble_features, residual_target

N_COST_ROWS = 15  # J1 (3), J2 (9), J4 (3)


class SolverError(RuntimeError):
    pass


@dataclass
class MpcConfig:
    horizon: int = 15
    dt: float = 0.02
    w1: np.ndarray = field(default_factory=lambda: np.full(3, 2000.0))
    w3: np.ndarray = field(default_factory=lambda: np.full(9, 0.1))
    k_e: np.ndarray = field(default_factory=lambda: np.array([0.8, 1.2, 1.2]))
    x_lo: np.ndarray = field(default_factory=lambda: np.full(NX, -np.inf))
    x_hi: np.ndarray = field(default_factory=lambda: np.full(NX, np.inf))
    u_lo: np.ndarray = field(default_factory=lambda: np.full(NU, -np.inf))
    u_hi: np.ndarray = field(default_factory=lambda: np.full(NU, np.inf))
    p_o_body: np.ndarray = field(default_factory=lambda: np.zeros(3))
    state_penalty: float = 1e4
    tol: float = 1e-8
    max_iter: int = 50
    penalty_passes: int = 4
    reference_mode: str = "lookahead"

    def __post_init__(self):
        for name, n in (("w1", 3), ("w3", NU), ("k_e", 3), ("x_lo", NX), ("x_hi", NX),
                        ("u_lo", NU), ("u_hi", NU), ("p_o_body", 3)):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if np.any(self.x_lo > self.x_hi) or np.any(self.u_lo > self.u_hi):
            raise ValueError("bounds are not ordered")
        if np.any(self.w1 < 0) or np.any(self.w3 < 0):
            raise ValueError("weights must be non-negative")
        if self.reference_mode not in ("lookahead", "held"):
            raise ValueError(f"unknown reference mode {self.reference_mode!r}")


@dataclass
class StageWeights:
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray

    def scaled(self, c: float) -> "StageWeights":
        return StageWeights(c * self.w1, c * self.w2, c * self.w3, c * self.w4)


@dataclass
class FrozenTerms:
    """Quantities held fixed over the horizon.

    ``v_ref`` has one desired end-effector velocity per stage (N+1 rows). The learning-space
    term is linearized as ``p_E^B(q) ~ p_eb + J_m (q - q_lin)``.
    """

    J_c: np.ndarray
    J_u: np.ndarray
    xi_u_dot: np.ndarray
    v_ref: np.ndarray
    p_eb: np.ndarray
    J_m: np.ndarray
    q_lin: np.ndarray
    p_o: np.ndarray


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    const: float
    lo: np.ndarray
    hi: np.ndarray
    # affine state map x_k = free[k] + Gamma[k] @ U
    free: np.ndarray
    Gamma: np.ndarray

    def cost(self, U) -> float:
        return float(0.5 * U @ self.H @ U + self.g @ U + self.const)

    def states(self, U) -> np.ndarray:
        return self.free + self.Gamma @ U


@dataclass
class ControlCommand:
    a_des: np.ndarray
    qdd_des: np.ndarray
    gamma: float = 0.0
    mode: Mode = Mode.FLIGHT
    costs: np.ndarray = field(default_factory=lambda: np.zeros(4))
    iterations: int = 0
    solve_time: float = 0.0
    converged: bool = True
    delta_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_e: float = 0.0
    d_o: float = 0.0

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.a_des, self.qdd_des])


def reference_velocity(v_traj, p_e, p_e_des, k_e) -> np.ndarray:
    """CLIK reference: trajectory velocity minus a gain on the position error."""
    return np.asarray(v_traj, float) - np.asarray(k_e, float) * (
        np.asarray(p_e, float) - np.asarray(p_e_des, float))


def cost_map(frozen: FrozenTerms) -> tuple[np.ndarray, np.ndarray]:
    """Row map ``S`` (15 x 24) and per-stage offsets ``c`` ((N+1) x 15) with residual rows
    ``r_k = S x_k + c_k`` ordered [J1 (3), J2 (9), J4 (3)]."""
    S = np.zeros((N_COST_ROWS, NX))
    S[0:3, VEL] = frozen.J_c[:, :3]
    S[0:3, JOINT_RATE] = frozen.J_c[:, 4:]
    S[3 + np.arange(3), VEL] = 1.0
    S[6 + np.arange(6), JOINT_RATE] = 1.0
    S[12:15, JOINT] = frozen.J_m
    n_stages = len(frozen.v_ref)
    c = np.zeros((n_stages, N_COST_ROWS))
    c[:, 0:3] = frozen.J_u @ frozen.xi_u_dot - frozen.v_ref
    c[:, 12:15] = frozen.p_eb - frozen.J_m @ frozen.q_lin - frozen.p_o
    return S, c


def stage_cost(x, u, frozen: FrozenTerms, weights: StageWeights, k: int = 0) -> np.ndarray:
    """The four objective terms [J1, J2, J3, J4] at stage ``k``."""
    x = np.asarray(x, float)
    xi_c_dot = np.concatenate([x[VEL], [0.0], x[JOINT_RATE]])  # yaw held
    e1 = frozen.J_c @ xi_c_dot + frozen.J_u @ frozen.xi_u_dot - frozen.v_ref[k]
    v_s = np.concatenate([x[VEL], x[JOINT_RATE]])
    p_eb = frozen.p_eb + frozen.J_m @ (x[JOINT] - frozen.q_lin)
    e4 = p_eb - frozen.p_o
    u = np.zeros(NU) if u is None else np.asarray(u, float)
    return np.array([
        e1 @ (weights.w1 * e1),
        v_s @ (weights.w2 * v_s),
        u @ (weights.w3 * u),
        e4 @ (weights.w4 * e4),
    ])


class Condenser:
    """Caches the input-to-state maps of a model for a fixed horizon."""

    def __init__(self, model: DiscreteModel, horizon: int):
        self.model = model
        self.N = horizon
        A, B = model.A, model.B
        Phi = np.empty((horizon + 1, NX, NX))
        Gamma = np.zeros((horizon + 1, NX, NU * horizon))
        Phi[0] = np.eye(NX)
        for k in range(horizon):
            Phi[k + 1] = A @ Phi[k]
            Gamma[k + 1] = A @ Gamma[k]
            Gamma[k + 1][:, NU * k:NU * (k + 1)] = B
        self.Phi = Phi
        self.Gamma = Gamma

    def free_response(self, x0, x_res=None) -> np.ndarray:
        A = self.model.A
        drift = self.model.C @ x_res if x_res is not None else np.zeros(NX)
        xs = np.empty((self.N + 1, NX))
        xs[0] = x0
        for k in range(self.N):
            xs[k + 1] = A @ xs[k] + drift
        return xs

    def condense(self, x0, x_res, frozen: FrozenTerms, weights: StageWeights,
                 u_lo, u_hi) -> QpProblem:
        S, c = cost_map(frozen)
        free = self.free_response(np.asarray(x0, float), x_res)
        G = np.einsum("rs,ksj->krj", S, self.Gamma)  # (N+1, 15, 9N)
        h = free @ S.T + c  # (N+1, 15)
        wrow = np.concatenate([weights.w1, weights.w2, weights.w4])
        Gw = G * wrow[None, :, None]
        n = NU * self.N
        H = 2.0 * np.einsum("kri,krj->ij", Gw, G)
        H[np.diag_indices(n)] += 2.0 * np.tile(weights.w3, self.N)
        H = 0.5 * (H + H.T)
        g = 2.0 * np.einsum("kri,kr->i", Gw, h)
        const = float(np.sum(wrow * h**2))
        return QpProblem(H=H, g=g, const=const, lo=np.tile(u_lo, self.N), hi=np.tile(u_hi, self.N),
                         free=free, Gamma=self.Gamma)


def condense(model: DiscreteModel, x0, x_res, frozen: FrozenTerms, weights: StageWeights,
             config: MpcConfig) -> QpProblem:
    return Condenser(model, config.horizon).condense(x0, x_res, frozen, weights,
                                                     config.u_lo, config.u_hi)


def _violations(states, x_lo, x_hi):
    """Stage/entry indices (stage >= 1) outside the state box, with the violated bound."""
    xs = states[1:]
    hi_k, hi_i = np.nonzero(xs > x_hi)
    lo_k, lo_i = np.nonzero(xs < x_lo)
    k = np.concatenate([hi_k, lo_k]) + 1
    i = np.concatenate([hi_i, lo_i])
    b = np.concatenate([x_hi[hi_i], x_lo[lo_i]])
    return k, i, b


def solve_with_soft_states(qp: QpProblem, x_lo, x_hi, rho: float, warm=None, tol=1e-8,
                           max_iter=50, passes=4) -> tuple[QpResult, QpProblem]:
    """Minimize the QP plus ``rho * sum(violation^2)`` over the state box.

    The penalty is piecewise quadratic; each pass adds the quadratic pieces of the entries
    violating at the current iterate and re-solves until that set stops changing.
    """
    has_bounds = np.any(np.isfinite(x_lo)) or np.any(np.isfinite(x_hi))
    x = None if warm is None else np.clip(warm, qp.lo, qp.hi)
    U_probe = x if x is not None else np.zeros_like(qp.g)
    active = set()
    if has_bounds:
        k, i, _ = _violations(qp.states(U_probe), x_lo, x_hi)
        active = set(zip(k.tolist(), i.tolist()))
    total_iter = 0
    for _ in range(max(1, passes)):
        prob = qp
        if active:
            ks, idx = np.array(sorted(active)).T
            states0 = qp.free[ks, idx]
            rows = qp.Gamma[ks, idx, :]
            # bound on the side the entry currently sits outside of (at the probe)
            probe_vals = qp.states(U_probe)[ks, idx]
            bound = np.where(probe_vals > x_hi[idx], x_hi[idx], x_lo[idx])
            off = states0 - bound
            prob = QpProblem(H=qp.H + 2.0 * rho * rows.T @ rows, g=qp.g + 2.0 * rho * rows.T @ off,
                             const=qp.const + rho * float(off @ off), lo=qp.lo, hi=qp.hi,
                             free=qp.free, Gamma=qp.Gamma)
        res = solve_box_qp(prob.H, prob.g, prob.lo, prob.hi, x0=x, tol=tol, max_iter=max_iter)
        total_iter += res.iterations
        x = res.x
        if not has_bounds:
            break
        k, i, _ = _violations(qp.states(x), x_lo, x_hi)
        new_active = set(zip(k.tolist(), i.tolist()))
        if new_active == active:
            break
        active = new_active
        U_probe = x
    res.iterations = total_iter
    return res, prob


@dataclass
class Measurement:
    pose: kin.QuadPose
    joints: kin.JointConfig
    x_hat: np.ndarray
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(NU))


class PredictiveController:
    """One controller cycle per call to :meth:`step`, in the order: expected-motion metric,
    weight allocation, objective assembly, online residual update, model residual refresh,
    QP solve."""

    def __init__(self, geometry: kin.ArmGeometry, model: DiscreteModel, config: MpcConfig,
                 allocation: AllocationParams, residual: OnlineResidual | None = None,
                 k_b=None):
        self.geometry = geometry
        self.model = model
        self.config = config
        self.allocation = allocation
        self.residual = residual
        self.k_b = np.asarray(model.k_b if k_b is None else k_b, dtype=float)
        self.condenser = Condenser(model, config.horizon)
        self._warm = None
        self._p_prev = None
        self.last_allocation: AllocationState | None = None

    def reset(self):
        self._warm = None
        self._p_prev = None

    def reference_profile(self, refs, p_e) -> np.ndarray:
        cfg = self.config
        e0 = p_e - refs[0].p
        n = cfg.horizon + 1
        if cfg.reference_mode == "held":
            return np.tile(reference_velocity(refs[0].v, p_e, refs[0].p, cfg.k_e), (n, 1))
        # error assumed to decay along the ideal CLIK path over the horizon
        decay = (1.0 - cfg.k_e * cfg.dt)[None, :] ** np.arange(n)[:, None]
        v_traj = np.array([r.v for r in refs[:n]])
        return v_traj - cfg.k_e * decay * e0

    def step(self, meas: Measurement, refs) -> ControlCommand:
        cfg, geo = self.config, self.geometry
        t0 = time.perf_counter()
        pose, joints = meas.pose, meas.joints
        refs = list(refs)
        if len(refs) < cfg.horizon + 1:
            refs = refs + [refs[-1]] * (cfg.horizon + 1 - len(refs))

        p_eb = kin.fk_manipulator(joints.q, geo)
        p_e = kin.compose_end_effector(pose.p, pose.rotation, p_eb)
        d_e = float(np.linalg.norm(p_e - refs[0].p))
        d_o = float(np.linalg.norm(p_eb - cfg.p_o_body))

        alloc = allocate(d_e, d_o, refs[0].d_g, self.allocation)
        self.last_allocation = alloc
        weights = StageWeights(cfg.w1, alloc.W2, cfg.w3, alloc.W4)

        split = kin.jacobians_aerial(pose, joints, geo)
        xi_u_dot = kin.body_rates_to_euler_rates(pose.euler, pose.omega)[:2]
        # J4 is linearized about the model's joint state so it is exact at stage 0
        q_lin = meas.x_hat[JOINT].copy()
        frozen = FrozenTerms(J_c=split.J_c, J_u=split.J_u, xi_u_dot=xi_u_dot,
                             v_ref=self.reference_profile(refs, p_e),
                             p_eb=kin.fk_manipulator(q_lin, geo),
                             J_m=kin.jacobian_manipulator(q_lin, geo), q_lin=q_lin, p_o=cfg.p_o_body)

        delta = np.zeros(3)
        x = meas.x_hat
        p_prev = x[POS].copy() if self._p_prev is None else self._p_prev
        self._p_prev = x[POS].copy()
        if self.residual is not None:
            feats = assemble_features(pose.euler, pose.v, pose.omega, joints.q, joints.qdot, meas.u_prev)
            # one-step prediction error of the velocity row, which consumes the previous position
            target = residual_target(pose.v, x[POS_DES], p_prev, self.k_b)
            self.residual.observe(feats, target)
            delta = np.asarray(self.residual.predict(feats), dtype=float)
        x_res = residual_embedding(delta) if self.model.kind == "modified" else None

        qp = self.condenser.condense(meas.x_hat, x_res, frozen, weights, cfg.u_lo, cfg.u_hi)
        warm = None
        if self._warm is not None:
            warm = np.concatenate([self._warm[NU:], self._warm[-NU:]])
        res, _ = solve_with_soft_states(qp, cfg.x_lo, cfg.x_hi, cfg.state_penalty, warm=warm,
                                        tol=cfg.tol, max_iter=cfg.max_iter, passes=cfg.penalty_passes)
        if not np.all(np.isfinite(res.x)):
            raise SolverError("QP solver produced a non-finite input sequence")
        self._warm = res.x.copy()

        states = qp.states(res.x)
        U = res.x.reshape(cfg.horizon, NU)
        costs = np.zeros(4)
        for k in range(cfg.horizon + 1):
            costs += stage_cost(states[k], U[k] if k < cfg.horizon else None, frozen, weights, k)
        u0 = U[0]
        return ControlCommand(a_des=u0[:3].copy(), qdd_des=u0[3:].copy(), gamma=alloc.gamma,
                              mode=alloc.mode, costs=costs, iterations=res.iterations,
                              solve_time=time.perf_counter() - t0, converged=res.converged,
                              delta_hat=delta, d_e=d_e, d_o=d_o)


__all__ = [
    "MpcConfig", "StageWeights", "FrozenTerms", "QpProblem", "ControlCommand", "Measurement",
    "PredictiveController", "Condenser", "SolverError", "reference_velocity", "cost_map",
    "stage_cost", "condense", "solve_with_soft_states", "POS", "VEL", "POS_DES", "VEL_DES",
]
