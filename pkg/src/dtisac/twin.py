"""Digital twin: per-entity constant-velocity Kalman tracks fed by delayed telemetry.

The measurement model is position-only and linear, so the EKF Jacobian is the
constant ``H = [I2 | 0]``. Tracks are stored batched: ``mean`` has shape
``(N, 4)`` and ``cov`` shape ``(N, 4, 4)`` with state order ``[px, py, vx, vy]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .telemetry import TelemetryPacket
from .world import BSConfig, ChannelParams, _bs_arrays, distance, path_loss

INIT_COV = np.diag([25.0, 25.0, 100.0, 100.0])


@dataclass(frozen=True)
class EKFParams:
    q_scale: float = 1.0
    r_floor: float = 1e-4

    def __post_init__(self):
        if self.q_scale <= 0:
            raise ValueError("q_scale must be positive")
        if self.r_floor <= 0:
            raise ValueError("r_floor must be positive")


@dataclass
class EKFTrack:
    mean: np.ndarray
    cov: np.ndarray
    last_update: float = 0.0


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, q_scale: float) -> np.ndarray:
    """Discrete white-noise-acceleration covariance for both axes."""
    Q = np.zeros((4, 4))
    Q[0, 0] = Q[1, 1] = dt ** 4 / 4
    Q[0, 2] = Q[2, 0] = Q[1, 3] = Q[3, 1] = dt ** 3 / 2
    Q[2, 2] = Q[3, 3] = dt ** 2
    return q_scale * Q


def predict_batch(mean, cov, dt: float, params: EKFParams):
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return mean.copy(), cov.copy()
    F = transition(dt)
    mean = mean @ F.T
    cov = F @ cov @ F.T + process_noise(dt, params.q_scale)
    return mean, cov


def update_batch(mean, cov, z, meas_sigma, params: EKFParams):
    """Joseph-form update of every track against its own position measurement.

    Rows with non-finite measurements are left untouched. A sigma of exactly
    zero marks a noiseless measurement and takes the R -> 0 limit: the position
    is pinned to ``z`` bit-for-bit and its covariance rows are zeroed.
    Returns the new ``(mean, cov, rejected_mask)``.
    """
    z = np.asarray(z, dtype=float)
    sigma = np.asarray(meas_sigma, dtype=float)
    exact = sigma == 0.0
    var = np.where(exact, 0.0, np.maximum(sigma ** 2, params.r_floor))
    ok = np.all(np.isfinite(z), axis=1) & np.isfinite(var)
    mean = mean.copy()
    cov = cov.copy()
    if not ok.any():
        return mean, cov, ~ok
    m, P, zz, r = mean[ok], cov[ok], z[ok], var[ok]
    R = r[:, None, None] * np.eye(2)
    S = P[:, :2, :2] + R
    try:
        K = np.linalg.solve(S, P[:, :2, :]).transpose(0, 2, 1)  # P H^T S^-1, S symmetric
    except np.linalg.LinAlgError:  # degenerate prior with a noiseless measurement
        K = (np.linalg.pinv(S) @ P[:, :2, :]).transpose(0, 2, 1)
    innov = zz - m[:, :2]
    m = m + np.einsum("nij,nj->ni", K, innov)
    I_KH = np.broadcast_to(np.eye(4), P.shape).copy()
    I_KH[:, :, :2] -= K
    P = I_KH @ P @ I_KH.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1)
    P = 0.5 * (P + P.transpose(0, 2, 1))
    pin = exact[ok]
    if pin.any():
        m[pin, :2] = zz[pin]
        P[pin, :2, :] = 0.0
        P[pin, :, :2] = 0.0
    mean[ok] = m
    cov[ok] = P
    return mean, cov, ~ok


def ekf_predict(track: EKFTrack, dt: float, params: EKFParams) -> EKFTrack:
    m, P = predict_batch(track.mean[None], track.cov[None], dt, params)
    return EKFTrack(m[0], P[0], track.last_update + dt)


def ekf_update(track: EKFTrack, z, meas_sigma: float, params: EKFParams) -> EKFTrack:
    m, P, _ = update_batch(track.mean[None], track.cov[None], np.reshape(z, (1, 2)),
                           np.array([meas_sigma]), params)
    return EKFTrack(m[0], P[0], track.last_update)


@dataclass
class BeliefState:
    ue_mean: np.ndarray
    ue_cov: np.ndarray
    tgt_mean: np.ndarray
    tgt_cov: np.ndarray
    csi_proxy: np.ndarray
    effective_lag: float

    @property
    def ue_pos(self) -> np.ndarray:
        return self.ue_mean[:, :2]

    @property
    def ue_vel(self) -> np.ndarray:
        return self.ue_mean[:, 2:]

    @property
    def tgt_pos(self) -> np.ndarray:
        return self.tgt_mean[:, :2]

    @property
    def tgt_vel(self) -> np.ndarray:
        return self.tgt_mean[:, 2:]

    @property
    def tgt_cov_trace(self) -> np.ndarray:
        return np.trace(self.tgt_cov, axis1=1, axis2=2)

    @property
    def ue_tracks(self) -> list[EKFTrack]:
        return [EKFTrack(m, P) for m, P in zip(self.ue_mean, self.ue_cov)]

    @property
    def target_tracks(self) -> list[EKFTrack]:
        return [EKFTrack(m, P) for m, P in zip(self.tgt_mean, self.tgt_cov)]


def predict_csi(ue_pos, serving, bss, ch: ChannelParams, p_ref: float = 1.0) -> np.ndarray:
    """SINR proxy per UE from predicted positions.

    Serving link at boresight with unit fading; each non-serving BS leaks at
    its sidelobe level (zero leakage for a pure Gaussian pattern).
    """
    pos, gtx, grx, _, side = _bs_arrays(bss)
    mean_power = p_ref * gtx[:, None] * grx[:, None] * path_loss(distance(pos, ue_pos), ch)
    cols = np.arange(mean_power.shape[1])
    signal = mean_power[serving, cols]
    leak = (mean_power * side[:, None]).sum(axis=0) - signal * side[serving]
    return signal / (ch.noise_power + leak)


class DigitalTwin:
    """Keeps every track at the time of the last processed measurement.

    Packets older than (or equal to) the last processed generation step are
    never re-filtered; they only cause forward prediction.
    """

    def __init__(self, n_ue: int, n_tgt: int, dt: float, params: EKFParams,
                 bss: tuple[BSConfig, ...], channel: ChannelParams, p_ref: float = 1.0,
                 arena=None):
        self.n_ue = n_ue
        self.arena = arena
        self.n_tgt = n_tgt
        self.dt = dt
        self.params = params
        self.bss = bss
        self.channel = channel
        self.p_ref = p_ref
        self.serving = np.zeros(n_ue, dtype=int)
        self.mean = np.zeros((n_ue + n_tgt, 4))
        self.cov = np.broadcast_to(INIT_COV, (n_ue + n_tgt, 4, 4)).copy()
        self.track_step = 0
        self.rejected = 0
        self.unmatched = 0

    def reset(self, init: TelemetryPacket, serving) -> None:
        """Seed every track from an initial acquisition packet.

        Without velocity reports tracks start at rest with the broad default
        covariance; with them, the covariance reflects the reported accuracy.
        """
        self.serving = np.asarray(serving, dtype=int).copy()
        self.mean = np.zeros((self.n_ue + self.n_tgt, 4))
        self.mean[: self.n_ue, :2] = init.ue_pos
        self.mean[self.n_ue:, :2] = init.tgt_pos
        self.cov = np.broadcast_to(INIT_COV, self.mean.shape + (4,)).copy()
        if init.ue_vel is not None and init.tgt_vel is not None:
            self.mean[: self.n_ue, 2:] = init.ue_vel
            self.mean[self.n_ue:, 2:] = init.tgt_vel
            pos_var = np.concatenate([init.ue_sigma, init.tgt_sigma]) ** 2
            var = max(init.vel_sigma ** 2, self.params.r_floor)
            self.cov[:, 0, 0] = self.cov[:, 1, 1] = np.maximum(pos_var, self.params.r_floor)
            self.cov[:, 2, 2] = self.cov[:, 3, 3] = var
        self.track_step = init.gen_step
        self.rejected = 0
        self.unmatched = 0

    def ingest(self, pkt: TelemetryPacket) -> bool:
        """Advance tracks to ``pkt`` and correct with it; False if the packet is stale."""
        if pkt.gen_step <= self.track_step:
            return False
        n_ue_meas = len(pkt.ue_pos)
        n_tgt_meas = len(pkt.tgt_pos)
        self.unmatched += max(n_ue_meas - self.n_ue, 0) + max(n_tgt_meas - self.n_tgt, 0)
        z = np.full((self.n_ue + self.n_tgt, 2), np.nan)
        s = np.full(self.n_ue + self.n_tgt, np.nan)
        k = min(n_ue_meas, self.n_ue)
        z[:k], s[:k] = pkt.ue_pos[:k], pkt.ue_sigma[:k]
        k = min(n_tgt_meas, self.n_tgt)
        z[self.n_ue:self.n_ue + k] = pkt.tgt_pos[:k]
        s[self.n_ue:self.n_ue + k] = pkt.tgt_sigma[:k]
        missing = ~np.isfinite(s)
        mean, cov = self._predict(self.mean, self.cov, pkt.gen_step - self.track_step)
        mean, cov, rej = update_batch(mean, cov, z, s, self.params)
        self.rejected += int(np.sum(rej & ~missing))
        self.mean, self.cov = mean, cov
        self.track_step = pkt.gen_step
        return True

    def _predict(self, mean, cov, n_steps: int):
        mean, cov = predict_batch(mean, cov, n_steps * self.dt, self.params)
        if self.arena is not None and n_steps > 0:
            mean, cov = reflect_tracks(mean, cov, self.arena)
        return mean, cov

    def synchronize(self, pkt: TelemetryPacket | None, now_step: int) -> BeliefState:
        if pkt is not None:
            if pkt.gen_step > now_step:
                raise ValueError("packet generated after decision time")
            self.ingest(pkt)
        lag_steps = now_step - self.track_step
        mean, cov = self._predict(self.mean, self.cov, lag_steps)
        ue_pos = mean[: self.n_ue, :2]
        csi = predict_csi(ue_pos, self.serving, self.bss, self.channel, self.p_ref)
        return BeliefState(
            ue_mean=mean[: self.n_ue], ue_cov=cov[: self.n_ue],
            tgt_mean=mean[self.n_ue:], tgt_cov=cov[self.n_ue:],
            csi_proxy=csi, effective_lag=lag_steps * self.dt,
        )


def reflect_tracks(mean, cov, arena):
    """Fold predicted tracks back inside a rectangular arena with specular walls.

    A wall crossing mirrors the position and negates that velocity component;
    the covariance is transformed by the same (sign-flip) Jacobian.
    """
    mean = np.array(mean, dtype=float)
    cov = np.array(cov, dtype=float)
    hi = np.asarray(arena, dtype=float)
    for axis in range(2):
        for _ in range(2):
            low = mean[:, axis] < 0.0
            high = mean[:, axis] > hi[axis]
            flip = low | high
            if not flip.any():
                break
            mean[low, axis] = -mean[low, axis]
            mean[high, axis] = 2.0 * hi[axis] - mean[high, axis]
            mean[flip, axis + 2] = -mean[flip, axis + 2]
            sign = np.ones(4)
            sign[[axis, axis + 2]] = -1.0
            cov[flip] = cov[flip] * np.outer(sign, sign)
    return mean, cov


def raw_observation(pkt: TelemetryPacket, now_step: int, serving, bss, channel: ChannelParams,
                    p_ref: float = 1.0) -> BeliefState:
    """Pass a delayed packet through unchanged, shaped like a belief.

    Velocities are unknown (zero) and covariances hold only the reported
    measurement variance.
    """
    def block(pos, sigma):
        mean = np.zeros((len(pos), 4))
        mean[:, :2] = pos
        cov = np.zeros((len(pos), 4, 4))
        cov[:, 0, 0] = cov[:, 1, 1] = np.asarray(sigma) ** 2
        return mean, cov

    ue_mean, ue_cov = block(pkt.ue_pos, pkt.ue_sigma)
    tgt_mean, tgt_cov = block(pkt.tgt_pos, pkt.tgt_sigma)
    csi = predict_csi(pkt.ue_pos, serving, bss, channel, p_ref)
    return BeliefState(ue_mean, ue_cov, tgt_mean, tgt_cov, csi, (now_step - pkt.gen_step) * pkt.dt)
