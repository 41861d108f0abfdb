import numpy as np
import pytest

from aerialmpc import model as mdl
from aerialmpc.model import JOINT, JOINT_RATE, NU, NX, POS, POS_DES, VEL, VEL_DES

K_B = np.array([6.67, 6.67, 2.38])
DT = 0.02
RNG = np.random.default_rng(5)


def fine_ode_step(x, u, k_b, dt, n=200):
    """RK4 integration of p' = k (p_d - p), p_d'' = a, q'' = qdd over one control period.

    Works on a batch of states (rows). Returns the position-type entries: p, p_d, v_d, q, q_dot.
    """
    x, u = np.atleast_2d(x), np.atleast_2d(u)
    y = np.hstack([x[:, POS], x[:, POS_DES], x[:, VEL_DES], x[:, JOINT], x[:, JOINT_RATE]])
    a, qdd = u[:, :3], u[:, 3:]

    def f(y):
        p, pd, vd, q, qd = y[:, 0:3], y[:, 3:6], y[:, 6:9], y[:, 9:15], y[:, 15:21]
        return np.hstack([k_b * (pd - p), vd, a, qd, qdd])

    h = dt / n
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def random_operating_states(n, e_max=0.02, vd_max=0.2, u_max=2.0, rng=RNG):
    x = np.zeros((n, NX))
    x[:, POS] = rng.uniform(-1, 1, (n, 3))
    x[:, POS_DES] = x[:, POS] + rng.uniform(-e_max, e_max, (n, 3))
    x[:, VEL_DES] = rng.uniform(-vd_max, vd_max, (n, 3))
    x[:, VEL] = K_B * (x[:, POS_DES] - x[:, POS])
    x[:, JOINT] = rng.uniform(-1, 1, (n, 6))
    x[:, JOINT_RATE] = rng.uniform(-1, 1, (n, 6))
    u = rng.uniform(-u_max, u_max, (n, NU))
    return x, u


def test_equivalent_velocity_examples():
    assert np.array_equal(mdl.equivalent_velocity(np.ones(3), np.ones(3), K_B, np.zeros(3)), np.zeros(3))
    assert np.allclose(mdl.equivalent_velocity(np.zeros(3), [0.1, 0, 0], K_B), [0.667, 0, 0], atol=1e-15)
    d = np.array([0.05, -0.02, 0.01])
    assert np.array_equal(mdl.equivalent_velocity(np.ones(3), np.ones(3), K_B, d), d)


def test_axis_block_hand_values():
    A1, B1, C1 = mdl.axis_blocks(6.67, DT)
    assert np.allclose(A1[0], [0.8666, 0, 0.1334, 0.002668], atol=1e-12)
    assert np.allclose(A1[1], [-6.67, 0, 6.67, 0.1334], atol=1e-12)
    assert np.allclose(A1[2], [0, 0, 1, 0.02], atol=1e-12)
    assert np.allclose(A1[3], [0, 0, 0, 1], atol=1e-12)
    assert np.allclose(B1, [6.67 * 8e-6 / 2, 6.67 * 4e-4 / 2, 2e-4, 0.02], atol=1e-15)
    expected_c = np.zeros((4, 4))
    expected_c[0, 1], expected_c[1, 1] = DT, 1.0
    assert np.array_equal(C1, expected_c)


@pytest.mark.parametrize("dt", [0.001, 0.02, 0.1])
def test_joint_blocks(dt):
    A2, B2 = mdl.joint_blocks(dt)
    assert np.array_equal(A2, [[1, dt], [0, 1]])
    assert np.array_equal(B2, [dt**2 / 2, dt])


def test_block_structure():
    m = mdl.build_discrete_model(K_B, DT)
    mask = np.zeros((NX, NX), bool)
    for i in range(3):
        mask[4 * i:4 * i + 4, 4 * i:4 * i + 4] = True
    for j in range(6):
        mask[12 + 2 * j:14 + 2 * j, 12 + 2 * j:14 + 2 * j] = True
    assert np.all(m.A[~mask] == 0)
    assert np.all(m.C[~mask] == 0)
    assert np.all(m.C[12:, 12:] == 0)
    for i, k in enumerate(K_B):
        A1, B1, C1 = mdl.axis_blocks(k, DT)
        s = slice(4 * i, 4 * i + 4)
        assert np.array_equal(m.A[s, s], A1)
        assert np.array_equal(m.B[s, i], B1)
        assert np.count_nonzero(m.B[s]) == 4


def test_axis_block_eigenvalues():
    for k in K_B:
        eig = np.sort(np.linalg.eigvals(mdl.axis_blocks(k, DT)[0]).real)
        assert np.allclose(eig, np.sort([0.0, 1 - k * DT, 1.0, 1.0]), atol=1e-10)


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        mdl.build_discrete_model(K_B, 0.0)
    with pytest.raises(ValueError):
        mdl.build_discrete_model([6.67, 0.0, 2.38], DT)
    with pytest.raises(ValueError):
        mdl.build_discrete_model([6.67, -1.0, 2.38], DT)


def test_residual_embedding_slots():
    x_res = mdl.residual_embedding([0.1, -0.2, 0.3])
    assert np.array_equal(np.flatnonzero(x_res), [1, 5, 9])
    m = mdl.build_discrete_model(K_B, DT)
    injected = m.C @ x_res
    assert np.allclose(injected[[0, 1, 2, 3]], [DT * 0.1, 0.1, 0, 0])
    assert np.allclose(injected[[8, 9]], [DT * 0.3, 0.3])


def test_predict_step_fixed_points():
    m = mdl.build_discrete_model(K_B, DT)
    assert np.array_equal(mdl.predict_step(m, np.zeros(NX), np.zeros(NU), np.zeros(NX)), np.zeros(NX))
    x = np.zeros(NX)
    x[POS] = x[POS_DES] = [0.3, -0.2, 1.0]
    x[JOINT] = RNG.uniform(-1, 1, 6)
    assert np.allclose(mdl.predict_step(m, x, np.zeros(NU)), x, atol=1e-15)


def test_desired_subsystem_is_double_integrator():
    m = mdl.build_discrete_model(K_B, DT)
    x, _ = random_operating_states(1)
    x = x[0]
    xn = mdl.predict_step(m, x, np.zeros(NU))
    assert np.allclose(xn[POS_DES], x[POS_DES] + DT * x[VEL_DES], atol=1e-15)
    assert np.array_equal(xn[VEL_DES], x[VEL_DES])


def test_predict_step_is_linear():
    m = mdl.build_discrete_model(K_B, DT)
    x, u = random_operating_states(1)
    r = mdl.residual_embedding(RNG.normal(size=3))
    alpha = 2.7
    assert np.allclose(mdl.predict_step(m, alpha * x[0], alpha * u[0], alpha * r),
                       alpha * mdl.predict_step(m, x[0], u[0], r), atol=1e-12)


def test_one_step_matches_fine_ode_in_operating_envelope():
    m = mdl.build_discrete_model(K_B, DT)
    x, u = random_operating_states(500)
    pred = (m.A @ x.T + m.B @ u.T).T
    ode = fine_ode_step(x, u, K_B, DT)
    got = np.hstack([pred[:, POS], pred[:, POS_DES], pred[:, VEL_DES], pred[:, JOINT], pred[:, JOINT_RATE]])
    assert np.max(np.abs(got - ode)) < 5e-4
    # double-integrator entries are exact
    assert np.max(np.abs(got[:, 3:] - ode[:, 3:])) < 1e-12


def test_ode_position_gap_scales_with_step_squared():
    x, u = random_operating_states(50)
    gaps = []
    for dt in (0.02, 0.01):
        m = mdl.build_discrete_model(K_B, dt)
        pred = (m.A @ x.T + m.B @ u.T).T
        gaps.append(np.max(np.abs(pred[:, POS] - fine_ode_step(x, u, K_B, dt)[:, :3])))
    assert 3.0 < gaps[0] / gaps[1] < 5.0


def test_rollout():
    m = mdl.build_discrete_model(K_B, DT)
    x0 = random_operating_states(1)[0][0]
    assert np.array_equal(mdl.rollout(m, x0, np.zeros((0, NU))), x0[None])
    u1, u2 = RNG.normal(size=(15, NU)), RNG.normal(size=(15, NU))
    lhs = mdl.rollout(m, x0, u1) + mdl.rollout(m, np.zeros(NX), u2) - mdl.rollout(m, np.zeros(NX), np.zeros((15, NU)))
    assert np.allclose(lhs, mdl.rollout(m, x0, u1 + u2), atol=1e-12)
    d = np.array([0.02, -0.01, 0.005])
    xs = mdl.rollout(m, x0, u1, d)
    x = x0
    for k in range(15):
        x = mdl.predict_step(m, x, u1[k], mdl.residual_embedding(d))
        assert np.allclose(xs[k + 1], x, atol=1e-13)


def test_integral_model_tracks_references_exactly():
    m = mdl.build_integral_model(DT)
    x = random_operating_states(1)[0][0]
    x[POS], x[VEL] = x[POS_DES], x[VEL_DES]
    u = RNG.normal(size=NU)
    xn = mdl.predict_step(m, x, u)
    assert np.allclose(xn[POS], xn[POS_DES], atol=1e-15)
    assert np.allclose(xn[VEL], xn[VEL_DES], atol=1e-15)
    assert np.array_equal(m.C, np.zeros((NX, NX)))
