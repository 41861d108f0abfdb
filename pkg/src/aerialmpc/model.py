"""Modified kinematic model: first-order equivalent quadcopter plus double-integrator joints.

State layout (24): per axis x, y, z ``[p, p_dot, p_des, p_des_dot]``, then per joint ``[q, q_dot]``.
Input layout (9): desired quad accelerations (3), desired joint accelerations (6).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NX = 24
NU = 9
N_AXES = 3
N_JOINTS = 6

# index helpers into StateX
POS = np.array([0, 4, 8])
VEL = np.array([1, 5, 9])
POS_DES = np.array([2, 6, 10])
VEL_DES = np.array([3, 7, 11])
JOINT = np.arange(12, 24, 2)
JOINT_RATE = np.arange(13, 24, 2)
RESIDUAL_SLOTS = VEL


@dataclass(frozen=True)
class DiscreteModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float
    k_b: np.ndarray
    kind: str = "modified"

    def __post_init__(self):
        for m in (self.A, self.B, self.C):
            m.setflags(write=False)


def equivalent_velocity(p_b, p_b_des, k_b, delta=None) -> np.ndarray:
    """Quad velocity predicted by the first-order closed-loop equivalent model."""
    v = np.asarray(k_b, dtype=float) * (np.asarray(p_b_des, dtype=float) - np.asarray(p_b, dtype=float))
    if delta is not None:
        v = v + np.asarray(delta, dtype=float)
    return v


def residual_embedding(delta) -> np.ndarray:
    x_res = np.zeros(NX)
    x_res[RESIDUAL_SLOTS] = np.asarray(delta, dtype=float).reshape(3)
    return x_res


def _check(k_b, dt):
    k_b = np.asarray(k_b, dtype=float).reshape(3)
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if np.any(k_b <= 0) or not np.all(np.isfinite(k_b)):
        raise ValueError(f"equivalent-model gains must be positive, got {k_b}")
    return k_b, float(dt)


def axis_blocks(k: float, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The 4x4 A1, 4x1 B1 and 4x4 C1 blocks for one quad axis with gain ``k``."""
    A1 = np.array([
        [1.0 - k * dt, 0.0, k * dt, k * dt**2],
        [-k, 0.0, k, k * dt],
        [0.0, 0.0, 1.0, dt],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B1 = np.array([k * dt**3 / 2, k * dt**2 / 2, dt**2 / 2, dt])
    C1 = np.zeros((4, 4))
    C1[0, 1] = dt
    C1[1, 1] = 1.0
    return A1, B1, C1


def joint_blocks(dt: float) -> tuple[np.ndarray, np.ndarray]:
    A2 = np.array([[1.0, dt], [0.0, 1.0]])
    B2 = np.array([dt**2 / 2, dt])
    return A2, B2


def _assemble(axis_mats, dt, k_b, kind):
    A = np.zeros((NX, NX))
    B = np.zeros((NX, NU))
    C = np.zeros((NX, NX))
    for i, (A1, B1, C1) in enumerate(axis_mats):
        s = slice(4 * i, 4 * i + 4)
        A[s, s] = A1
        B[s, i] = B1
        C[s, s] = C1
    A2, B2 = joint_blocks(dt)
    for j in range(N_JOINTS):
        s = slice(12 + 2 * j, 14 + 2 * j)
        A[s, s] = A2
        B[s, 3 + j] = B2
    return DiscreteModel(A=A, B=B, C=C, dt=dt, k_b=k_b, kind=kind)


def build_discrete_model(k_b, dt: float = 0.02) -> DiscreteModel:
    k_b, dt = _check(k_b, dt)
    return _assemble([axis_blocks(k, dt) for k in k_b], dt, k_b, "modified")


def build_integral_model(dt: float = 0.02) -> DiscreteModel:
    """Baseline model ignoring closed-loop dynamics.

    As for the joints, the quad is assumed to be exactly where its double-integrated
    references put it: the actual position and velocity rows copy the desired-state update,
    so there is no lag between commanded and actual motion.
    """
    _, dt = _check(np.ones(3), dt)
    A2, B2 = joint_blocks(dt)
    blocks = []
    for _ in range(N_AXES):
        A1 = np.zeros((4, 4))
        A1[0:2, 2:4] = A2
        A1[2:4, 2:4] = A2
        B1 = np.concatenate([B2, B2])
        blocks.append((A1, B1, np.zeros((4, 4))))
    return _assemble(blocks, dt, np.full(3, np.inf), "integral")


def predict_step(model: DiscreteModel, x, u, x_res=None) -> np.ndarray:
    x_next = model.A @ x + model.B @ u
    if x_res is not None:
        x_next = x_next + model.C @ x_res
    return x_next


def rollout(model: DiscreteModel, x0, u_seq, delta_held=None) -> np.ndarray:
    """Propagate ``x0`` through ``u_seq`` (N x 9) with the residual held constant.

    Returns an (N+1) x 24 array including ``x0``.
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, NU)
    xs = np.empty((len(u_seq) + 1, NX))
    xs[0] = x0
    drift = model.C @ residual_embedding(delta_held) if delta_held is not None else np.zeros(NX)
    for k, u in enumerate(u_seq):
        xs[k + 1] = model.A @ xs[k] + model.B @ u + drift
    return xs
