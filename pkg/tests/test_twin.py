import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import run_kf_comparison
from dtisac.telemetry import TelemetryPacket
from dtisac.twin import (INIT_COV, DigitalTwin, EKFParams, EKFTrack, ekf_predict, ekf_update,
                         predict_batch, predict_csi, raw_observation, reflect_tracks, update_batch)
from dtisac.world import BSConfig, ChannelParams, path_loss

DT = 0.01


def _q(dt, q):
    G = np.array([[dt * dt / 2, 0], [0, dt * dt / 2], [dt, 0], [0, dt]])
    return q * G @ G.T


# -- predict / update ----------------------------------------------------------------

def test_predict_moves_mean():
    t = ekf_predict(EKFTrack(np.array([0.0, 0, 1, 0]), np.eye(4)), 0.01, EKFParams())
    np.testing.assert_allclose(t.mean, [0.01, 0, 1, 0], atol=1e-15)


def test_predict_zero_prior_gives_q():
    t = ekf_predict(EKFTrack(np.zeros(4), np.zeros((4, 4))), 0.02, EKFParams(q_scale=3.0))
    np.testing.assert_allclose(t.cov, _q(0.02, 3.0), rtol=1e-12, atol=1e-18)


def test_predict_zero_dt_is_identity():
    m, P = np.array([1.0, 2, 3, 4]), np.diag([1.0, 2, 3, 4])
    t = ekf_predict(EKFTrack(m, P), 0.0, EKFParams())
    np.testing.assert_array_equal(t.mean, m)
    np.testing.assert_array_equal(t.cov, P)


def test_update_measurement_dominated():
    t = EKFTrack(np.array([100.0, -50, 0, 0]), np.diag([1e8, 1e8, 1.0, 1.0]))
    out = ekf_update(t, (3.0, 4.0), 1e-3, EKFParams(r_floor=1e-8))
    np.testing.assert_allclose(out.mean[:2], [3.0, 4.0], atol=1e-3)


def test_update_zero_innovation_keeps_mean():
    m = np.array([5.0, 6, 1, -1])
    out = ekf_update(EKFTrack(m, np.eye(4) * 4), m[:2], 1.0, EKFParams())
    np.testing.assert_array_equal(out.mean, m)


def test_update_scalar_halving():
    out = ekf_update(EKFTrack(np.zeros(4), np.eye(4)), (1.0, 1.0), 1.0, EKFParams())
    assert out.cov[0, 0] == pytest.approx(0.5)
    assert out.cov[1, 1] == pytest.approx(0.5)
    np.testing.assert_allclose(out.mean[:2], [0.5, 0.5])


def test_noiseless_update_pins_position():
    z = np.array([1.234567, -7.654321])
    out = ekf_update(EKFTrack(np.array([0.0, 0, 2, 2]), INIT_COV.copy()), z, 0.0, EKFParams())
    assert out.mean[0] == z[0] and out.mean[1] == z[1]
    np.testing.assert_array_equal(out.cov[:2, :], 0.0)


def test_nonfinite_measurement_rejected():
    m, P = np.ones((2, 4)), np.broadcast_to(np.eye(4), (2, 4, 4)).copy()
    z = np.array([[np.nan, 0.0], [2.0, 2.0]])
    m2, P2, rej = update_batch(m, P, z, np.array([1.0, 1.0]), EKFParams())
    np.testing.assert_array_equal(rej, [True, False])
    np.testing.assert_array_equal(m2[0], m[0])
    assert not np.array_equal(m2[1], m[1])


def test_matches_textbook_filter():
    worst_mean, worst_cov, min_eig = run_kf_comparison(
        2000, 4, ekf_predict, ekf_update, EKFParams(q_scale=2.0), EKFTrack)
    assert worst_mean <= 1e-9 and worst_cov <= 1e-9
    assert min_eig >= -1e-9


def test_covariance_psd_over_many_operations():
    rng = np.random.default_rng(0)
    n = 1000
    params = EKFParams(q_scale=5.0)
    mean = rng.normal(0, 10, (n, 4))
    cov = np.broadcast_to(INIT_COV, (n, 4, 4)).copy()
    for _ in range(100):  # 1000 tracks x 100 rounds = 1e5 operations
        if rng.random() < 0.5:
            tr0 = np.trace(cov, axis1=1, axis2=2)
            mean, cov = predict_batch(mean, cov, rng.uniform(1e-3, 0.1), params)
            assert np.all(np.trace(cov, axis1=1, axis2=2) > tr0)
        else:
            tr0 = np.trace(cov, axis1=1, axis2=2)
            sig = rng.uniform(0.01, 10.0, n)
            mean, cov, _ = update_batch(mean, cov, mean[:, :2] + rng.normal(0, 1, (n, 2)), sig, params)
            assert np.all(np.trace(cov, axis1=1, axis2=2) <= tr0 * (1 + 1e-12))
        assert np.linalg.eigvalsh(cov).min() >= -1e-9


def test_ekf_params_validation():
    with pytest.raises(ValueError):
        EKFParams(q_scale=0.0)
    with pytest.raises(ValueError):
        EKFParams(r_floor=-1.0)
    with pytest.raises(ValueError):
        predict_batch(np.zeros((1, 4)), np.zeros((1, 4, 4)), -0.1, EKFParams())


# -- twin ------------------------------------------------------------------------------

BSS = (BSConfig(id=0, pos=(0.0, 0.0)),)
CH = ChannelParams()


def _packet(gen, arr, ue, tgt, sigma=0.0, **kw):
    ue, tgt = np.atleast_2d(ue).astype(float), np.atleast_2d(tgt).astype(float)
    return TelemetryPacket(gen_step=gen, arrival_step=arr, dt=DT, ue_pos=ue,
                           ue_sigma=np.full(len(ue), sigma), tgt_pos=tgt,
                           tgt_sigma=np.full(len(tgt), sigma), **kw)


def _twin(**kw):
    return DigitalTwin(1, 1, DT, EKFParams(), BSS, CH, **kw)


def test_zero_delay_noiseless_stationary():
    tw = _twin()
    tw.reset(_packet(0, 0, (10, 5), (30, 40)), [0])
    for k in range(1, 20):
        b = tw.synchronize(_packet(k, k, (10, 5), (30, 40)), k)
        np.testing.assert_array_equal(b.ue_pos, [[10, 5]])
        np.testing.assert_array_equal(b.tgt_pos, [[30, 40]])
        assert b.effective_lag == 0.0


def test_delayed_constant_velocity_converges():
    vel = np.array([8.0, -3.0])
    tw = _twin()
    p0 = np.array([20.0, 20.0])
    tw.reset(_packet(0, 0, p0, p0), [0])
    err = []
    for k in range(1, 300):
        gen = k - 5
        pkt = _packet(gen, k, p0 + vel * gen * DT, p0 + vel * gen * DT) if gen > 0 else None
        b = tw.synchronize(pkt, k)
        err.append(np.linalg.norm(b.ue_pos[0] - (p0 + vel * k * DT)))
    assert err[-1] < 1e-3
    assert err[-1] < err[20]


def test_predict_only_without_packets():
    tw = _twin()
    tw.reset(_packet(0, 0, (0, 0), (0, 0), ue_vel=np.array([[1.0, 0.0]]), tgt_vel=np.array([[0.0, 2.0]]),
                     vel_sigma=0.1), [0])
    lags = []
    for k in range(1, 6):
        b = tw.synchronize(None, k)
        lags.append(b.effective_lag)
        np.testing.assert_allclose(b.ue_pos, [[k * DT, 0.0]], atol=1e-12)
        np.testing.assert_allclose(b.tgt_pos, [[0.0, 2 * k * DT]], atol=1e-12)
    np.testing.assert_allclose(np.diff(lags), DT)


def test_stale_packet_is_not_refiltered():
    tw = _twin()
    tw.reset(_packet(0, 0, (0, 0), (0, 0), sigma=1.0), [0])
    assert tw.ingest(_packet(5, 5, (1, 1), (1, 1), sigma=1.0))
    mean = tw.mean.copy()
    assert not tw.ingest(_packet(3, 6, (9, 9), (9, 9), sigma=1.0))
    np.testing.assert_array_equal(tw.mean, mean)


def test_synchronize_is_deterministic():
    def run():
        tw = _twin()
        tw.reset(_packet(0, 0, (3, 3), (4, 4), sigma=0.5), [0])
        return [tw.synchronize(_packet(k - 3, k, (3 + k, 3), (4, 4 + k), sigma=0.5), k).ue_mean.copy()
                for k in range(4, 30)]
    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_future_packet_rejected():
    tw = _twin()
    tw.reset(_packet(0, 0, (0, 0), (0, 0)), [0])
    with pytest.raises(ValueError):
        tw.synchronize(_packet(7, 7, (0, 0), (0, 0)), 5)


def test_reset_with_acquisition_velocities():
    tw = _twin()
    tw.reset(_packet(0, 0, (1, 2), (3, 4), sigma=0.5, ue_vel=np.array([[5.0, 6.0]]),
                     tgt_vel=np.array([[7.0, 8.0]]), vel_sigma=2.0), [0])
    np.testing.assert_array_equal(tw.mean, [[1, 2, 5, 6], [3, 4, 7, 8]])
    np.testing.assert_allclose(np.diagonal(tw.cov, axis1=1, axis2=2), [[0.25, 0.25, 4, 4]] * 2)


# -- wall reflection ----------------------------------------------------------------------

def test_reflect_folds_position_and_velocity():
    mean = np.array([[-2.0, 50.0, -3.0, 1.0], [50.0, 105.0, 0.5, 4.0]])
    cov = np.broadcast_to(np.eye(4) + 0.1, (2, 4, 4)).copy()
    m, P = reflect_tracks(mean, cov, (100.0, 100.0))
    np.testing.assert_allclose(m, [[2.0, 50.0, 3.0, 1.0], [50.0, 95.0, 0.5, -4.0]])
    np.testing.assert_allclose(np.diagonal(P, axis1=1, axis2=2), np.diagonal(cov, axis1=1, axis2=2))
    assert P[0, 0, 1] == pytest.approx(-0.1)
    assert np.linalg.eigvalsh(P).min() > 0


def test_twin_with_arena_tracks_bounce():
    tw = _twin(arena=(100.0, 100.0))
    tw.reset(_packet(0, 0, (98, 50), (50, 50), ue_vel=np.array([[100.0, 0.0]]),
                     tgt_vel=np.array([[0.0, 0.0]]), vel_sigma=0.0), [0])
    b = tw.synchronize(None, 4)
    np.testing.assert_allclose(b.ue_pos, [[98.0, 50.0]], atol=1e-9)  # 102 folds to 98
    assert b.ue_vel[0, 0] == pytest.approx(-100.0)


# -- link-quality proxy ------------------------------------------------------------------

def test_predict_csi_single_link():
    bs = BSConfig(id=0, pos=(0, 0), g_max_tx=30.0, g_rx=10.0)
    ch = ChannelParams()
    csi = predict_csi(np.array([[1.0, 0.0]]), np.array([0]), (bs,), ch, p_ref=0.5)
    expected = 0.5 * 30.0 * 10.0 * float(path_loss(ch.d_min, ch)) / ch.noise_power
    assert csi[0] == pytest.approx(expected, rel=1e-12)


def test_predict_csi_distance_law_and_symmetry():
    ch = ChannelParams()
    c = predict_csi(np.array([[10.0, 0.0], [20.0, 0.0], [0.0, -10.0]]), np.zeros(3, int), BSS, ch)
    assert c[1] / c[0] == pytest.approx(2 ** -3.2, rel=1e-12)
    assert c[0] == pytest.approx(c[2], rel=1e-12)


def test_raw_observation_passes_packet_through():
    pkt = _packet(3, 8, [(1, 2)], [(5, 6)], sigma=0.5)
    obs = raw_observation(pkt, 10, np.array([0]), BSS, CH)
    np.testing.assert_array_equal(obs.ue_pos, [[1, 2]])
    np.testing.assert_array_equal(obs.tgt_vel, 0.0)
    assert obs.effective_lag == pytest.approx(7 * DT)
    np.testing.assert_allclose(obs.tgt_cov_trace, [0.5])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-50, 50), st.floats(-50, 50), st.integers(1, 20))
def test_lag_reduction_noiseless_cv(q, vx, vy, delay):
    """With exact measurements of a CV mover the twin's position error is below the raw lag error."""
    vel = np.array([vx, vy])
    if np.linalg.norm(vel) < 1e-3:
        return
    tw = DigitalTwin(1, 1, DT, EKFParams(q_scale=1.0 + q), BSS, CH)
    p0 = np.array([200.0, 200.0])
    tw.reset(_packet(0, 0, p0, p0, ue_vel=vel[None], tgt_vel=vel[None], vel_sigma=0.0), [0])
    k = 100
    gen = k - delay
    pos = p0 + vel * gen * DT
    b = tw.synchronize(_packet(gen, k, pos, pos), k)
    truth = p0 + vel * k * DT
    assert np.linalg.norm(b.ue_pos[0] - truth) < np.linalg.norm(pos - truth)
