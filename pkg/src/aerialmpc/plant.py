"""Synthetic aerial manipulator used as ground truth.

The quadcopter is a closed second-order position loop around the double-integrated references,
with quasi-static tilt through a first-order attitude lag. Joints are PD-tracked. A coupling
force from arm motion and an external disturbance battery (bias, two sinusoids, low-pass
noise) act on the quad's translational dynamics.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin

GRAVITY = 9.81


class PlantDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class PlantConfig:
    omega_n: np.ndarray = field(default_factory=lambda: np.array([13.34, 13.34, 4.76]))
    zeta: np.ndarray = field(default_factory=lambda: np.ones(3))
    vel_feedforward: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass_ratio: float = 1.2 / 3.8
    coupling: bool = True
    disturbances: bool = True
    # disturbance amplitudes are velocity-equivalent (m/s): the steady velocity residual an
    # acceleration disturbance of that size leaves against the first-order equivalent model
    dist_bias: np.ndarray = field(default_factory=lambda: np.array([0.02, -0.015, 0.01]))
    dist_amp1: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.01]))
    dist_freq1: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.07, 0.06]))
    dist_amp2: np.ndarray = field(default_factory=lambda: np.array([0.01, 0.01, 0.005]))
    dist_freq2: np.ndarray = field(default_factory=lambda: np.array([0.23, 0.19, 0.21]))
    dist_noise: np.ndarray = field(default_factory=lambda: np.array([0.005, 0.005, 0.003]))
    dist_noise_tau: float = 2.0
    tau_att: float = 0.08
    kp_joint: float = 400.0
    kd_joint: float = 40.0
    substep: float = 0.002
    envelope: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for name in ("omega_n", "zeta", "vel_feedforward", "dist_bias", "dist_amp1", "dist_freq1",
                     "dist_amp2", "dist_freq2", "dist_noise"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if np.any(self.omega_n <= 0) or np.any(self.zeta <= 0):
            raise ValueError("natural frequency and damping must be positive")
        if self.substep <= 0 or self.tau_att <= 0:
            raise ValueError("substep and attitude lag must be positive")

    @property
    def equivalent_gain(self) -> np.ndarray:
        """First-order gain whose ramp lag and step-response area match the loop: w_n / (2 zeta)."""
        return self.omega_n / (2.0 * self.zeta)

    def velocity_to_accel(self) -> np.ndarray:
        """Scale from a velocity-equivalent disturbance amplitude to an acceleration."""
        return self.omega_n**2 / self.equivalent_gain


@dataclass
class PlantState:
    p: np.ndarray
    v: np.ndarray
    euler: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler_rate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def copy(self) -> "PlantState":
        return replace(self, p=self.p.copy(), v=self.v.copy(), euler=self.euler.copy(),
                       q=self.q.copy(), qd=self.qd.copy(), a=self.a.copy(),
                       euler_rate=self.euler_rate.copy())

    @classmethod
    def at_rest(cls, p, q, t: float = 0.0) -> "PlantState":
        return cls(p=np.asarray(p, float).copy(), v=np.zeros(3), euler=np.zeros(3),
                   q=np.asarray(q, float).copy(), qd=np.zeros(6), t=t)

    def pose(self) -> kin.QuadPose:
        omega = kin.euler_rates_to_body_rates(self.euler, self.euler_rate)
        return kin.QuadPose(p=self.p.copy(), euler=self.euler.copy(), v=self.v.copy(), omega=omega)

    def joints(self) -> kin.JointConfig:
        return kin.JointConfig(q=self.q.copy(), qdot=self.qd.copy())


@dataclass
class PlantCommand:
    """References for one control period; positions/velocities are at the period start and
    evolve with the constant accelerations inside it."""

    p_des: np.ndarray
    v_des: np.ndarray
    a_des: np.ndarray
    q_des: np.ndarray
    qd_des: np.ndarray
    qdd_des: np.ndarray

    @classmethod
    def hold(cls, p, q) -> "PlantCommand":
        return cls(np.asarray(p, float), np.zeros(3), np.zeros(3), np.asarray(q, float),
                   np.zeros(6), np.zeros(6))


def coupling_disturbance(com_history, dt: float, mass_ratio: float) -> np.ndarray:
    """Reaction acceleration on the quad from the arm's centre-of-mass acceleration.

    ``com_history`` holds world-frame arm CoM offsets sampled every ``dt``; the acceleration
    is their second difference. Fewer than three samples give zero.
    """
    if len(com_history) < 3:
        return np.zeros(3)
    c0, c1, c2 = (np.asarray(c, float) for c in list(com_history)[-3:])
    return -mass_ratio * (c2 - 2.0 * c1 + c0) / dt**2


class Plant:
    """Stateful plant stepped once per control period by the harness."""

    def __init__(self, config: PlantConfig, geometry: kin.ArmGeometry, state: PlantState,
                 control_dt: float = 0.02):
        if config.substep > control_dt + 1e-12:
            raise ValueError("integration substep must not exceed the control period")
        self.config = config
        self.geometry = geometry
        self.state = state.copy()
        self.dt = control_dt
        self.n_sub = max(1, int(round(control_dt / config.substep)))
        self.h = control_dt / self.n_sub
        self.clamp_events = 0
        self._com = deque(maxlen=3)
        self._noise = np.zeros(3)
        rng = np.random.default_rng(config.seed)
        self._phase1 = rng.uniform(0, 2 * np.pi, 3)
        self._phase2 = rng.uniform(0, 2 * np.pi, 3)
        self._rng = rng
        self._gain = config.velocity_to_accel()
        self.last_coupling = np.zeros(3)
        self.last_external = np.zeros(3)

    def arm_com_offset(self, state: PlantState) -> np.ndarray:
        com_body = kin.link_midpoints(state.q, self.geometry).mean(axis=0)
        return kin.euler_to_rotation(state.euler) @ com_body

    def external_disturbance(self, t: float) -> np.ndarray:
        c = self.config
        if not c.disturbances:
            return np.zeros(3)
        v_eq = (c.dist_bias + c.dist_amp1 * np.sin(2 * np.pi * c.dist_freq1 * t + self._phase1)
                + c.dist_amp2 * np.sin(2 * np.pi * c.dist_freq2 * t + self._phase2) + self._noise)
        return self._gain * v_eq

    def _advance_noise(self):
        c = self.config
        a = np.exp(-self.dt / c.dist_noise_tau)
        self._noise = a * self._noise + np.sqrt(1 - a * a) * c.dist_noise * self._rng.standard_normal(3)

    def _deriv(self, y, tau, cmd: PlantCommand, dist):
        c = self.config
        p, v, euler, q, qd = y[0:3], y[3:6], y[6:9], y[9:15], y[15:21]
        p_d = cmd.p_des + cmd.v_des * tau + 0.5 * cmd.a_des * tau * tau
        v_d = cmd.v_des + cmd.a_des * tau
        a_fc = c.omega_n**2 * (p_d - p) + 2 * c.zeta * c.omega_n * (c.vel_feedforward * v_d - v)
        psi = euler[2]
        ax = np.cos(psi) * a_fc[0] + np.sin(psi) * a_fc[1]
        ay = -np.sin(psi) * a_fc[0] + np.cos(psi) * a_fc[1]
        tilt = np.array([-ay / GRAVITY, ax / GRAVITY, 0.0])
        q_d = cmd.q_des + cmd.qd_des * tau + 0.5 * cmd.qdd_des * tau * tau
        qd_d = cmd.qd_des + cmd.qdd_des * tau
        out = np.empty(21)
        out[0:3] = v
        out[3:6] = a_fc + dist
        out[6:9] = (tilt - euler) / c.tau_att
        out[9:15] = qd
        out[15:21] = c.kp_joint * (q_d - q) + c.kd_joint * (qd_d - qd)
        return out

    def step(self, cmd: PlantCommand) -> PlantState:
        """Advance one control period with fixed-step RK4 substeps."""
        c, s = self.config, self.state
        self._com.append(self.arm_com_offset(s))
        d_couple = coupling_disturbance(self._com, self.dt, c.mass_ratio) if c.coupling else np.zeros(3)
        d_ext = self.external_disturbance(s.t)
        dist = d_couple + d_ext
        self.last_coupling, self.last_external = d_couple, d_ext
        y = np.concatenate([s.p, s.v, s.euler, s.q, s.qd])
        h = self.h
        for i in range(self.n_sub):
            tau = i * h
            k1 = self._deriv(y, tau, cmd, dist)
            k2 = self._deriv(y + 0.5 * h * k1, tau + 0.5 * h, cmd, dist)
            k3 = self._deriv(y + 0.5 * h * k2, tau + 0.5 * h, cmd, dist)
            k4 = self._deriv(y + h * k3, tau + h, cmd, dist)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        dy = self._deriv(y, self.dt, cmd, dist)
        q, qd = y[9:15].copy(), y[15:21].copy()
        lo, hi = self.geometry.q_min, self.geometry.q_max
        out = (q < lo) | (q > hi)
        if out.any():
            self.clamp_events += int(out.sum())
            q = np.clip(q, lo, hi)
            qd[out] = 0.0
        new = PlantState(p=y[0:3].copy(), v=y[3:6].copy(), euler=y[6:9].copy(), q=q, qd=qd,
                         a=dy[3:6].copy(), euler_rate=dy[6:9].copy(), t=s.t + self.dt)
        if not np.all(np.isfinite(y)) or np.max(np.abs(new.v)) > c.envelope or \
                np.max(np.abs(new.euler[:2])) >= np.pi / 2:
            raise PlantDivergence(f"plant left its envelope at t={new.t:.2f}s")
        if c.disturbances:
            self._advance_noise()
        self.state = new
        return new.copy()
