import numpy as np
import pytest

from boxlift.core import Pose6, Stiffness
from boxlift.estimator import detect_liftoff, estimate
from boxlift.estimator import MeasurementBatch
from boxlift.simplant import (AxisBox, BoxModel, EnvironmentModel, PlantConfig, PlantState, SettleError,
                              add_measurement_noise, handle_commands, rollout, rollout_batch, settle,
                              settle_batch, static_hold_wrenches)

K = Stiffness.diagonal(1000.0, 10.0)
R_L = np.array([-0.15, 0.0, 0.0])
R_R = np.array([0.15, 0.0, 0.0])
BOX1 = BoxModel((0.15, 0.10, 0.10), 1.7, 0.5, (0.0902, 0.05016, 0.0))
CENTRED = BoxModel((0.15, 0.10, 0.10), 1.7, 0.5, (0.0, 0.0, 0.0))
GROUND = EnvironmentModel()
CLIP = EnvironmentModel(0.0, (AxisBox((-0.5, -0.02, 0.25), (0.5, 0.4, 0.28)),), 1e5)


def state(box_pose, u_L=None, u_R=None, attached=(True, True)):
    p = Pose6.from_vector(box_pose)
    zl = np.r_[p.p + R_L, p.o]
    zr = np.r_[p.p + R_R, p.o]
    return PlantState(p, Pose6.from_vector(zl if u_L is None else u_L), Pose6.from_vector(zr if u_R is None else u_R),
                      K, R_L, R_R, attached=attached)


def test_box_model():
    assert BOX1.mass == pytest.approx(2.2)
    assert np.allclose(BOX1.com, [0.0205, 0.0114, 0.0], atol=1e-15)
    assert BOX1.corners().shape == (8, 3)
    with pytest.raises(ValueError):
        BoxModel((0.1, 0.1, 0.1), 0.0)
    with pytest.raises(ValueError):
        BoxModel((0.1, -0.1, 0.1), 1.0)


def test_resting_on_ground_carries_weight():
    st = settle(state([0, 0, 0.1, 0, 0, 0], attached=(False, False)), BOX1, GROUND)
    assert np.isclose(st.F_env[2], 21.582, rtol=1e-9)
    assert np.allclose(st.F_env[:2], 0, atol=1e-9)


def test_commands_at_rest_share_weight_with_ground():
    st = settle(state([0, 0, 0.1, 0, 0, 0]), CENTRED, GROUND)
    total = st.F_env[2] + st.w_L.f[2] + st.w_R.f[2]
    assert np.isclose(total, 21.582, rtol=1e-9)


def test_lifted_commands_hang_free():
    q = np.array([0, 0, 0.1, 0, 0, 0])
    st = settle(state(q, np.r_[q[:3] + R_L + [0, 0, 0.05], 0, 0, 0], np.r_[q[:3] + R_R + [0, 0, 0.05], 0, 0, 0]),
                BOX1, GROUND)
    assert np.allclose(st.F_env, 0)
    assert np.allclose(st.w_L.f + st.w_R.f, [0, 0, 21.582], atol=1e-6)


def test_symmetric_squeeze():
    q = np.array([0, 0, 0.1, 0, 0, 0])
    st = settle(state(q, np.r_[q[:3] + R_L + [0.02, 0, 0], 0, 0, 0], np.r_[q[:3] + R_R - [0.02, 0, 0], 0, 0, 0],
                      attached=(True, True)), CENTRED, GROUND)
    assert np.isclose(st.w_L.f[0], -st.w_R.f[0], rtol=1e-9)
    assert np.isclose(st.w_L.f[0], 20.0, rtol=1e-6)


def test_settled_state_balances(rng):
    for _ in range(10):
        q = np.array([0, 0, 0.2, 0, 0, 0])
        uL = np.r_[q[:3] + R_L + rng.normal(0, 0.01, 3), rng.normal(0, 0.05, 3)]
        uR = np.r_[q[:3] + R_R + rng.normal(0, 0.01, 3), rng.normal(0, 0.05, 3)]
        out = settle_batch(q, uL, uR, BOX1, GROUND, K, R_L, R_R)
        assert out.converged[0]
        assert out.residual[0] <= 1e-6


def test_settle_failure_raises():
    q = np.array([0, 0, 0.2, 0, 0, 0])
    with pytest.raises(SettleError):
        settle(state(q), BOX1, GROUND, tol=1e-30)


def test_rollout_above_everything_has_no_contact():
    cfg = PlantConfig(BOX1, CLIP, K, R_L, R_R)
    traj = np.zeros((15, 6))
    traj[:, 2] = 0.13
    traj[:, 1] = -np.linspace(0, 0.3, 15)
    roll = rollout(traj, cfg)
    assert not roll.truncated
    assert np.array_equal(roll.F_env, np.zeros((15, 3)))
    assert np.allclose(roll.z_box, traj, atol=1e-9)


def test_penalty_force_matches_realized_depth():
    cfg = PlantConfig(CENTRED, CLIP, K, R_L, R_R)
    traj = np.zeros((11, 6))
    traj[:, 2] = np.linspace(0.14, 0.155, 11)  # top face ends 5 mm above the shelf underside
    traj[:, 1] = 0.1
    r = rollout(traj, cfg)
    assert not r.truncated
    top = r.z_box[-1, 2] + 0.10
    depth = top - 0.25
    assert depth > 0
    assert np.isclose(np.linalg.norm(r.F_env[-1]), 1e5 * depth * 4, rtol=1e-6)
    assert np.allclose(r.F_env[-1, :2], 0, atol=1e-9)  # four top corners


def test_penalty_force_is_outward_and_unilateral(rng):
    pts = rng.uniform([-0.6, -0.1, -0.05], [0.6, 0.5, 0.35], (20000, 3))
    F = CLIP.corner_forces(pts)
    assert np.all(F[:, 2][pts[:, 2] < 0] > 0)
    sh = CLIP.shelves[0]
    inside = np.all((pts > sh.lo) & (pts < sh.hi), axis=1)
    out_of_everything = ~inside & (pts[:, 2] >= 0)
    assert np.all(F[out_of_everything] == 0)
    # inside the slab every component pushes toward the nearer face on its axis
    lo, hi = pts - sh.lo, sh.hi - pts
    outward = np.where(lo < hi, -1.0, 1.0)
    Fi = F[inside & (pts[:, 2] > 0)]
    oi = outward[inside & (pts[:, 2] > 0)]
    assert np.all(Fi * oi >= 0)
    # a clear face contact is purely along that face normal
    p = np.array([[0.0, 0.2, 0.251]])
    f = CLIP.corner_forces(p)[0]
    assert np.allclose(f, [0, 0, -1e5 * 0.001])


def test_shelf_force_continuous_across_edge():
    # moving a corner through the diagonal of the slab edge never makes the force jump
    s = np.linspace(0.0005, 0.0015, 2001)
    pts = np.stack([np.zeros_like(s), -0.02 + s, 0.25 + 0.001 * np.ones_like(s)], axis=1)
    F = CLIP.corner_forces(pts)
    assert np.abs(np.diff(F, axis=0)).max() < 1.0


def test_lift_ramp_rollout_reaches_liftoff():
    cfg = PlantConfig(BOX1, GROUND, K, R_L, R_R)
    q = np.array([0, 0, 0.1, 0, 0, 0])
    p0 = [q[:3] + R_L, q[:3] + R_R]
    seen = False
    for k in range(60):
        lift = 0.0005 * k
        uL = np.r_[q[:3] + R_L + [0, 0, lift], 0, 0, 0]
        uR = np.r_[q[:3] + R_R + [0, 0, lift], 0, 0, 0]
        out = settle_batch(q, uL, uR, cfg.box, cfg.env, K, R_L, R_R)
        qq = out.q[0]
        from boxlift.core import euler_to_matrix
        R = euler_to_matrix(qq[3:])
        if detect_liftoff(qq[:3] + R @ R_L, qq[:3] + R @ R_R, p0[0], p0[1], [0, 0, 1], 0.005):
            seen = True
            assert np.allclose(out.F_env[0], 0)
            break
    assert seen


def test_noise_free_round_trip_through_plant():
    """Level hold: settled handle wrenches recover the true mass and in-plane CoM."""
    cfg = PlantConfig(BOX1, GROUND, K, R_L, R_R)
    hold = static_hold_wrenches(BOX1, R_L, R_R)
    traj = np.tile([0, 0, 0.3, 0, 0, 0.0], (3, 1))
    r = rollout(traj, cfg, hold=hold)
    b = MeasurementBatch(r.w_L, r.w_R, R_L, R_R)
    est = estimate(b)
    assert abs(est.m_hat - 2.2) <= 1e-6 * 2.2
    assert np.all(np.abs(est.r_com_hat[:2] - BOX1.com[:2]) <= 1e-6)


def test_handle_commands_realize_wrench():
    q = np.array([[0.1, -0.2, 0.3, 0.05, -0.02, 0.1]])
    w = np.array([5.0, 1, 2, 0.1, 0, -0.1])
    uL, _ = handle_commands(q, R_L, R_R, K, w, w)
    from boxlift.core import euler_to_matrix
    R = euler_to_matrix(q[0, 3:])
    zL = np.r_[q[0, :3] + R @ R_L, q[0, 3:]]
    ww = K.K @ (uL[0] - zL)
    assert np.allclose(np.r_[R.T @ ww[:3], R.T @ ww[3:]], w)


def test_rollout_batch_matches_single():
    cfg = PlantConfig(BOX1, CLIP, K, R_L, R_R)
    traj = np.zeros((2, 8, 6))
    traj[:, :, 2] = np.linspace(0.13, 0.2, 8)
    traj[1, :, 1] = 0.05
    both = rollout_batch(traj, cfg)
    one = rollout(traj[1], cfg)
    assert np.allclose(both[1].z_box, one.z_box, atol=1e-12)


def test_noise():
    w = np.zeros((100_000, 6))
    assert np.array_equal(add_measurement_noise(w, 0, 0, 1), w)
    n = add_measurement_noise(w, 0.05, 0.005, seed=7)
    assert abs(n[:, 0].std() - 0.05) <= 0.02 * 0.05
    assert abs(n[:, 4].std() - 0.005) <= 0.02 * 0.005
    assert np.array_equal(n, add_measurement_noise(w, 0.05, 0.005, seed=7))
    with pytest.raises(ValueError):
        add_measurement_noise(w, -1, 0)
