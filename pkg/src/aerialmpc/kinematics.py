"""Kinematics of a quadcopter carrying a 6-joint serial arm.

Euler angles follow the ZYX (yaw-pitch-roll) convention, ``R = Rz(psi) Ry(theta) Rx(phi)``.
Arm geometry uses standard Denavit-Hartenberg rows ``(a, alpha, d, theta_offset)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 6


@dataclass(frozen=True)
class ArmGeometry:
    """DH table of the arm plus the mount offset of its base in the body frame."""

    dh: np.ndarray  # (6, 4): a, alpha, d, theta_offset
    mount: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_min: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, -np.pi))
    q_max: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, np.pi))

    def __post_init__(self):
        dh = np.asarray(self.dh, dtype=float)
        if dh.shape != (N_JOINTS, 4):
            raise ValueError(f"DH table must be {N_JOINTS}x4, got {dh.shape}")
        if not np.all(np.isfinite(dh)):
            raise ValueError("DH table has non-finite entries")
        object.__setattr__(self, "dh", dh)
        object.__setattr__(self, "mount", np.asarray(self.mount, dtype=float).reshape(3))
        object.__setattr__(self, "q_min", np.asarray(self.q_min, dtype=float).reshape(N_JOINTS))
        object.__setattr__(self, "q_max", np.asarray(self.q_max, dtype=float).reshape(N_JOINTS))
        if np.any(self.q_min > self.q_max):
            raise ValueError("joint limits are not ordered")

    @property
    def reach(self) -> float:
        return float(np.sum(np.abs(self.dh[:, 0])) + np.sum(np.abs(self.dh[:, 2])))


def default_geometry() -> ArmGeometry:
    """Hanging 6-DOF arm with 0.38 m of total link length."""
    dh = np.array([
        [0.00, -np.pi / 2, 0.00, 0.0],
        [0.14, 0.0, 0.00, 0.0],
        [0.12, 0.0, 0.00, 0.0],
        [0.00, -np.pi / 2, 0.00, 0.0],
        [0.00, np.pi / 2, 0.06, 0.0],
        [0.00, 0.0, 0.06, 0.0],
    ])
    return ArmGeometry(
        dh=dh,
        mount=np.array([0.0, 0.0, -0.08]),
        q_min=np.array([-np.pi, -2.6, -2.6, -np.pi, -2.6, -np.pi]),
        q_max=np.array([np.pi, 2.6, 2.6, np.pi, 2.6, np.pi]),
    )


@dataclass
class JointConfig:
    q: np.ndarray
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(N_JOINTS)
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(N_JOINTS)


@dataclass
class QuadPose:
    p: np.ndarray
    euler: np.ndarray = field(default_factory=lambda: np.zeros(3))  # phi, theta, psi
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))  # body rates

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.euler = np.asarray(self.euler, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.euler)


@dataclass(frozen=True)
class JacobianSplit:
    J_c: np.ndarray  # 3x10, columns p_B (3), psi, q (6)
    J_u: np.ndarray  # 3x2, columns phi, theta


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(euler) -> np.ndarray:
    phi, theta, psi = np.asarray(euler, dtype=float)
    return _rot_z(psi) @ _rot_y(theta) @ _rot_x(phi)


def rotation_partials(euler) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of R w.r.t. (phi, theta, psi)."""
    phi, theta, psi = np.asarray(euler, dtype=float)
    # dR/da = R_a * skew(axis) for each elemental rotation
    ex = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    ey = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    ez = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    Rx, Ry, Rz = _rot_x(phi), _rot_y(theta), _rot_z(psi)
    d_phi = Rz @ Ry @ Rx @ ex
    d_theta = Rz @ Ry @ ey @ Rx
    d_psi = ez @ Rz @ Ry @ Rx
    return d_phi, d_theta, d_psi


def body_rates_to_euler_rates(euler, omega) -> np.ndarray:
    """Map body angular velocity to ZYX Euler angle rates (phi_dot, theta_dot, psi_dot)."""
    phi, theta, _ = np.asarray(euler, dtype=float)
    wx, wy, wz = np.asarray(omega, dtype=float)
    sp, cp = np.sin(phi), np.cos(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    return np.array([
        wx + sp * tt * wy + cp * tt * wz,
        cp * wy - sp * wz,
        (sp * wy + cp * wz) / ct,
    ])


def euler_rates_to_body_rates(euler, euler_dot) -> np.ndarray:
    phi, theta, _ = np.asarray(euler, dtype=float)
    dphi, dtheta, dpsi = np.asarray(euler_dot, dtype=float)
    sp, cp = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    return np.array([
        dphi - st * dpsi,
        cp * dtheta + sp * ct * dpsi,
        -sp * dtheta + cp * ct * dpsi,
    ])


def dh_transform(a, alpha, d, theta) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def joint_frames(q, geo: ArmGeometry) -> list[np.ndarray]:
    """Homogeneous transforms of frames 0..6 in the body frame (frame 0 is the arm base)."""
    T = np.eye(4)
    T[:3, 3] = geo.mount
    frames = [T]
    for (a, alpha, d, off), qi in zip(geo.dh, np.asarray(q, dtype=float)):
        T = T @ dh_transform(a, alpha, d, qi + off)
        frames.append(T)
    return frames


def fk_manipulator(q, geo: ArmGeometry) -> np.ndarray:
    """End-effector position in the body frame."""
    return joint_frames(q, geo)[-1][:3, 3].copy()


def jacobian_manipulator(q, geo: ArmGeometry) -> np.ndarray:
    """3x6 positional Jacobian of :func:`fk_manipulator` (revolute joints about each frame's z)."""
    frames = joint_frames(q, geo)
    p_end = frames[-1][:3, 3]
    J = np.empty((3, N_JOINTS))
    for i in range(N_JOINTS):
        z = frames[i][:3, 2]
        J[:, i] = np.cross(z, p_end - frames[i][:3, 3])
    return J


def link_midpoints(q, geo: ArmGeometry) -> np.ndarray:
    """Midpoints of consecutive frame origins, one per link, in the body frame."""
    origins = np.array([T[:3, 3] for T in joint_frames(q, geo)])
    return 0.5 * (origins[:-1] + origins[1:])


def compose_end_effector(p_B, R_B, p_E_body) -> np.ndarray:
    return np.asarray(p_B, dtype=float) + np.asarray(R_B) @ np.asarray(p_E_body, dtype=float)


def end_effector_position(pose: QuadPose, q, geo: ArmGeometry) -> np.ndarray:
    return compose_end_effector(pose.p, pose.rotation, fk_manipulator(q, geo))


def jacobians_aerial(pose: QuadPose, joints: JointConfig, geo: ArmGeometry) -> JacobianSplit:
    """Actuated/underactuated Jacobians of the world end-effector position.

    ``p_E_dot = J_c @ [p_B_dot, psi_dot, q_dot] + J_u @ [phi_dot, theta_dot]``
    """
    p_eb = fk_manipulator(joints.q, geo)
    R = euler_to_rotation(pose.euler)
    d_phi, d_theta, d_psi = rotation_partials(pose.euler)
    J_c = np.zeros((3, 4 + N_JOINTS))
    J_c[:, :3] = np.eye(3)
    J_c[:, 3] = d_psi @ p_eb
    J_c[:, 4:] = R @ jacobian_manipulator(joints.q, geo)
    J_u = np.column_stack([d_phi @ p_eb, d_theta @ p_eb])
    return JacobianSplit(J_c=J_c, J_u=J_u)
