import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atmoskit.dynamics import Disturbance, InertialParams, Model, RigidState, quat_from_axis_angle, quat_from_yaw
from atmoskit.estimator import (NX_AUG, AugmentedEstimate, DisturbanceObserver, EstimatorError, Measurement,
                                _jacobian, default_process_noise, ekf_predict, ekf_update, offset_free_step)
from atmoskit.nmpc import Controller, OcpProblem, Reference

P = InertialParams()
DT = 0.1
TILT = Disturbance(np.array([0.0196, 0.0, 0.0]))


def _state(yaw=0.3):
    return RigidState(p=[0.2, -0.1, 0], v=[0.05, 0.02, 0], q=quat_from_yaw(yaw), omega=[0, 0, 0.1]).as_array()


def _psd(P):
    return np.allclose(P, P.T, atol=0) and np.min(np.linalg.eigvalsh(P)) >= -1e-12


def test_measurement_canonical_chart():
    x = _state()
    x[6:10] *= -1
    z = Measurement.from_state(x)
    assert np.allclose(z.q_vec, -x[7:10])
    with pytest.raises(EstimatorError):
        Measurement([0, 0, 0], [0, 0, 0], [1.0, 0.5, 0], [0, 0, 0])
    with pytest.raises(EstimatorError):
        Measurement([np.nan, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])


def test_predict_zero_noise_matches_plant():
    x = _state()
    est = AugmentedEstimate.from_state(x, cov=np.zeros((NX_AUG, NX_AUG)), d=TILT)
    u = np.array([0.3, -0.1, 0, 0, 0, 0.02])
    out = ekf_predict(est, u, P, DT, W=np.zeros(NX_AUG))
    xn = Model("wrench", P, TILT).step(x, u, DT)
    assert np.allclose(out.state, xn, atol=1e-15)
    assert np.array_equal(out.cov, np.zeros((NX_AUG, NX_AUG)))
    assert out.k == 1


def test_jacobian_translational_block():
    est = AugmentedEstimate.from_state(_state(), d=TILT)
    F = _jacobian(est.mean, np.zeros(6), P, DT)
    assert np.allclose(F[3:6, 12:15], DT * np.eye(3), atol=1e-9)
    assert np.allclose(F[0:3, 12:15], DT * DT / 2 * np.eye(3), atol=1e-9)
    assert np.allclose(F[0:3, 3:6], DT * np.eye(3), atol=1e-9)
    assert np.allclose(F[12:18], np.eye(NX_AUG)[12:18], atol=1e-12)


def test_trace_nondecreasing_in_prediction():
    est = AugmentedEstimate.from_state(RigidState().as_array())
    for _ in range(20):
        nxt = ekf_predict(est, np.zeros(6), P, DT)
        assert np.trace(nxt.cov) >= np.trace(est.cov)
        est = nxt


def test_zero_innovation_leaves_mean():
    est = AugmentedEstimate.from_state(_state(), d=TILT)
    est = ekf_predict(est, np.zeros(6), P, DT)
    z = Measurement(*np.split(est.mean[:12], 4))
    out = ekf_update(est, z)
    assert np.allclose(out.mean, est.mean, atol=1e-15)
    assert np.trace(out.cov) < np.trace(est.cov)


def test_update_rejects_indefinite_innovation():
    est = AugmentedEstimate.from_state(_state())
    with pytest.raises(EstimatorError, match="min eigenvalue"):
        ekf_update(est, Measurement.from_state(_state()), V=-np.ones(12))


def test_predict_rejects_bad_dt():
    with pytest.raises(EstimatorError):
        ekf_predict(AugmentedEstimate.from_state(_state()), np.zeros(6), P, 0.0)


def test_disturbance_converges_on_stationary_plant():
    x = RigidState().as_array()
    hold = np.concatenate((-P.mass * TILT.d_v, np.zeros(3)))
    plant = Model("wrench", P, TILT)
    obs = DisturbanceObserver(P, DT)
    obs.initialize(x)
    hit = None
    for k in range(1, 201):
        obs.update(Measurement.from_state(x))
        d_hat = obs.estimate.mean[12]
        if hit is None and abs(d_hat - 0.0196) <= 0.05 * 0.0196:
            hit = k
        obs.predict(hold)
        x = plant.step(x, hold, DT)
    assert hit is not None and hit <= 200
    assert abs(obs.estimate.mean[12] - 0.0196) <= 0.05 * 0.0196
    assert np.max(np.abs(obs.estimate.mean[13:18])) < 1e-3


def test_disturbance_converges_for_other_constants():
    rng = np.random.default_rng(0)
    for _ in range(3):
        d = Disturbance(rng.uniform(-0.05, 0.05, 3) * [1, 1, 0], np.array([0, 0, rng.uniform(-0.01, 0.01)]))
        plant = Model("wrench", P, d)
        hold = np.concatenate((-P.mass * d.d_v, -P.inertia @ d.d_omega))
        x = RigidState().as_array()
        obs = DisturbanceObserver(P, DT)
        obs.initialize(x)
        for _ in range(300):
            obs.update(Measurement.from_state(x))
            obs.predict(hold)
            x = plant.step(x, hold, DT)
        got = obs.estimate.mean[12:18]
        truth = d.as_array()
        assert np.linalg.norm(got - truth) <= 0.05 * np.linalg.norm(truth)


def test_covariance_psd_over_many_cycles():
    rng = np.random.default_rng(1)
    obs = DisturbanceObserver(P, DT)
    x = RigidState(q=quat_from_axis_angle([0, 0, 1], 0.5)).as_array()
    obs.initialize(x)
    plant = Model("wrench", P)
    for k in range(10_000):
        u = rng.uniform(-0.5, 0.5, 6) * [1, 1, 0, 0, 0, 0.4]
        x = plant.step(x, u, DT)
        x[3:6] *= 0.99  # keep the random walk bounded
        obs.predict(u)
        z = Measurement.from_state(x)
        z.p += rng.normal(scale=1e-2, size=3)
        obs.update(z)
        if k % 500 == 0:
            assert _psd(obs.estimate.cov)
    assert _psd(obs.estimate.cov)


@given(st.lists(st.booleans(), min_size=1, max_size=25), st.integers(0, 2 ** 31))
def test_interleavings_keep_covariance_psd(ops, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    est = AugmentedEstimate.from_state(RigidState(q=q / np.linalg.norm(q), omega=rng.normal(size=3) * 0.2).as_array())
    for predict in ops:
        if predict:
            est = ekf_predict(est, rng.normal(size=6) * 0.3, P, DT)
        else:
            z = Measurement.from_state(est.state)
            z.p += rng.normal(scale=0.05, size=3)
            est = ekf_update(est, z)
        assert _psd(est.cov)
        assert est.state[6] >= 0.0
        assert np.linalg.norm(est.mean[6:9]) <= 1.0 + 1e-12


def test_disabled_d_omega_stays_zero():
    obs = DisturbanceObserver(P, DT, estimate_d_omega=False)
    assert np.all(default_process_noise(False)[15:18] == 0)
    x = RigidState(omega=[0, 0, 0.2]).as_array()
    obs.initialize(x)
    plant = Model("wrench", P, Disturbance(d_omega=np.array([0, 0, 0.01])))
    for _ in range(50):
        obs.update(Measurement.from_state(x))
        obs.predict(np.zeros(6))
        x = plant.step(x, np.zeros(6), DT)
    assert np.all(obs.estimate.mean[15:18] == 0.0)


# --- offset-free composition ---------------------------------------------

def _run(offset_free: bool, d: Disturbance, ticks: int):
    pr = OcpProblem("wrench")
    ctl = Controller(pr)
    plant = Model("wrench", P, d)
    x = RigidState().as_array()
    ref = Reference.constant(x, pr.N, "wrench")
    est = AugmentedEstimate.from_state(x)
    us = []
    for _ in range(ticks):
        if offset_free:
            u, est = offset_free_step(est, ctl, Measurement.from_state(x), ref)
        else:
            u = ctl.step(x, ref)
        us.append(u)
        x = plant.step(x, u, DT)
    return x, np.array(us), est


def test_offset_free_reduces_to_nominal_without_disturbance():
    pr = OcpProblem("wrench")
    x0 = RigidState.planar(0.5, -0.3, 0.2).as_array()
    ref = Reference.constant(RigidState().as_array(), pr.N, "wrench")
    plant = Model("wrench", P)
    a, b = Controller(pr), Controller(OcpProblem("wrench"))
    xa = xb = x0
    est = AugmentedEstimate.from_state(x0)
    for _ in range(30):
        ua, est = offset_free_step(est, a, Measurement.from_state(xa), ref)
        ub = b.step(xb, ref)
        assert np.allclose(ua, ub, atol=1e-6)
        xa, xb = plant.step(xa, ua, DT), plant.step(xb, ub, DT)


def test_tilt_offset_removed():
    x_nom, u_nom, _ = _run(False, TILT, 250)
    x_of, u_of, est = _run(True, TILT, 250)
    assert np.linalg.norm(x_nom[0:3]) > 0.02
    assert np.linalg.norm(x_of[0:3]) < 0.01
    assert abs(2 * np.arcsin(x_of[9])) < np.radians(1)
    # holding force balances the tilt
    assert u_of[-1, 0] == pytest.approx(-P.mass * 0.0196, rel=0.02)
    assert est.mean[12] == pytest.approx(0.0196, rel=0.05)


def test_offset_free_requires_wrench_controller():
    with pytest.raises(EstimatorError):
        offset_free_step(AugmentedEstimate.from_state(_state()), Controller(OcpProblem("da")),
                         Measurement.from_state(_state()), Reference.constant(_state(), 15))


def test_estimate_follows_spin_through_half_turn():
    plant = Model("wrench", P)
    x = RigidState(q=quat_from_yaw(2.5), omega=[0, 0, 0.5]).as_array()
    obs = DisturbanceObserver(P, DT)
    obs.initialize(x)
    for _ in range(60):  # 3 rad of yaw, across q_w = 0
        obs.update(Measurement.from_state(x))
        obs.predict(np.zeros(6))
        x = plant.step(x, np.zeros(6), DT)
        assert abs(obs.estimate.state[6:10] @ x[6:10]) > 1 - 1e-6
    assert np.linalg.norm(obs.estimate.mean[12:18]) < 1e-4
