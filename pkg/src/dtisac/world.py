"""Ground-truth multi-cell ISAC environment.

Positions are stored as ``(N, 2)`` float arrays in meters, angles in radians
measured counter-clockwise from the +x axis (so +pi/2 points north).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def bearing(src, dst):
    """Bearing from each ``src`` row to each ``dst`` row, shape (len(src), len(dst))."""
    src = np.atleast_2d(src)
    dst = np.atleast_2d(dst)
    d = dst[None, :, :] - src[:, None, :]
    return np.arctan2(d[..., 1], d[..., 0])


def distance(src, dst):
    src = np.atleast_2d(src)
    dst = np.atleast_2d(dst)
    d = dst[None, :, :] - src[:, None, :]
    return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True)
class BSConfig:
    id: int
    pos: tuple[float, float]
    g_max_tx: float = float(db_to_lin(15.0))
    g_rx: float = float(db_to_lin(10.0))
    beamwidth_sigma: float = float(np.deg2rad(10.0))
    # Floor of the pattern relative to the peak, 0 gives a pure Gaussian mainlobe.
    sidelobe: float = 0.0
    # sensing beam width; None reuses the communication beam width
    sense_beamwidth_sigma: float | None = None

    def __post_init__(self):
        if self.g_max_tx <= 0 or self.g_rx <= 0:
            raise ValueError("BS gains must be positive")
        if self.beamwidth_sigma <= 0:
            raise ValueError("beamwidth_sigma must be positive")
        if self.sense_beamwidth_sigma is not None and self.sense_beamwidth_sigma <= 0:
            raise ValueError("sense_beamwidth_sigma must be positive")
        if not 0.0 <= self.sidelobe < 1.0:
            raise ValueError("sidelobe must be in [0, 1)")

    @property
    def sense_sigma(self) -> float:
        return self.beamwidth_sigma if self.sense_beamwidth_sigma is None else self.sense_beamwidth_sigma


@dataclass(frozen=True)
class ChannelParams:
    bandwidth: float = 20e6
    noise_psd: float = -174.0  # dBm/Hz
    pathloss_exp: float = 3.2
    pathloss_const_db: float = -30.0
    d_min: float = 1.0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.pathloss_exp <= 0:
            raise ValueError("pathloss_exp must be positive")
        if self.d_min < 1.0:
            raise ValueError("d_min must be >= 1 m")

    @property
    def noise_power(self) -> float:
        """Thermal noise integrated over the band, in watts."""
        return float(db_to_lin(self.noise_psd - 30.0) * self.bandwidth)


@dataclass(frozen=True)
class SensingParams:
    c_radar: float = 1e-5
    c_est: float = 5.0
    sigma_est_min: float = 0.5
    sigma_est_max: float = 10.0


@dataclass(frozen=True)
class Action:
    """Per-BS power split and steering angles, all arrays of length N_BS."""

    p_comm: np.ndarray
    p_sense: np.ndarray
    theta_comm: np.ndarray
    theta_sense: np.ndarray

    @property
    def total_power(self) -> float:
        return float(np.sum(self.p_comm) + np.sum(self.p_sense))

    def as_array(self) -> np.ndarray:
        return np.stack([self.p_comm, self.p_sense, self.theta_comm, self.theta_sense], axis=1)


@dataclass
class WorldState:
    t: float
    ue_pos: np.ndarray
    ue_vel: np.ndarray
    serving: np.ndarray
    tgt_pos: np.ndarray
    tgt_vel: np.ndarray
    rcs: np.ndarray
    fading: np.ndarray  # |h|^2, shape (N_BS, N_UE)

    def copy(self) -> "WorldState":
        return replace(
            self,
            ue_pos=self.ue_pos.copy(),
            ue_vel=self.ue_vel.copy(),
            serving=self.serving.copy(),
            tgt_pos=self.tgt_pos.copy(),
            tgt_vel=self.tgt_vel.copy(),
            rcs=self.rcs.copy(),
            fading=self.fading.copy(),
        )


@dataclass
class SensingEstimates:
    ids: np.ndarray
    est_pos: np.ndarray
    est_sigma: np.ndarray
    snr: np.ndarray  # best echo SNR per target
    bs: np.ndarray  # BS that produced each estimate


@dataclass
class GroundTruthMetrics:
    per_ue_rate: np.ndarray
    sum_rate: float
    interference: np.ndarray
    per_target_sq_err: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mse: float = 0.0
    sensing: SensingEstimates | None = None


# -- link-level formulas ------------------------------------------------------

def beam_gain(steer, bearing_, g_peak, sigma, sidelobe=0.0):
    delta = wrap_angle(np.asarray(bearing_, dtype=float) - np.asarray(steer, dtype=float))
    shape = np.exp(-0.5 * (delta / sigma) ** 2)
    if sidelobe > 0.0:
        shape = np.maximum(shape, sidelobe)
    return g_peak * shape


def bs_beam_gain(steer, bearing_, bs: BSConfig):
    """Transmit gain of ``bs`` toward ``bearing_`` when steered at ``steer``."""
    return beam_gain(steer, bearing_, bs.g_max_tx, bs.beamwidth_sigma, bs.sidelobe)


def path_loss(d, ch: ChannelParams):
    d = np.maximum(np.asarray(d, dtype=float), ch.d_min)
    return db_to_lin(ch.pathloss_const_db) * d ** (-ch.pathloss_exp)


def _bs_arrays(bss, sensing: bool = False):
    pos = np.array([b.pos for b in bss], dtype=float)
    gtx = np.array([b.g_max_tx for b in bss])
    grx = np.array([b.g_rx for b in bss])
    sig = np.array([b.sense_sigma if sensing else b.beamwidth_sigma for b in bss])
    side = np.array([b.sidelobe for b in bss])
    return pos, gtx, grx, sig, side


def _gain_matrix(steer, bear, g_peak, sig, side):
    delta = wrap_angle(bear - steer[:, None])
    shape = np.exp(-0.5 * (delta / sig[:, None]) ** 2)
    shape = np.maximum(shape, side[:, None])
    return g_peak[:, None] * shape


def received_power(state: WorldState, action: Action, ch: ChannelParams, bss) -> np.ndarray:
    """P_rx(i, j) for every BS i and UE j."""
    pos, gtx, grx, sig, side = _bs_arrays(bss)
    bear = bearing(pos, state.ue_pos)
    d = distance(pos, state.ue_pos)
    g = _gain_matrix(np.asarray(action.theta_comm, float), bear, gtx, sig, side)
    return np.asarray(action.p_comm, float)[:, None] * g * grx[:, None] * path_loss(d, ch) * state.fading


def compute_rates(state: WorldState, action: Action, ch: ChannelParams, bss) -> GroundTruthMetrics:
    prx = received_power(state, action, ch, bss)
    cols = np.arange(prx.shape[1])
    signal = prx[state.serving, cols]
    interference = prx.sum(axis=0) - signal
    interference = np.maximum(interference, 0.0)
    sinr = signal / (ch.noise_power + interference)
    rates = ch.bandwidth * np.log2(1.0 + sinr)
    return GroundTruthMetrics(per_ue_rate=rates, sum_rate=float(rates.sum()), interference=interference)


def echo_snr_matrix(state: WorldState, action: Action, ch: ChannelParams, bss, sp: SensingParams):
    """Echo SNR for every (BS, target) pair, shape (N_BS, N_Tgt)."""
    pos, gtx, grx, sig, side = _bs_arrays(bss, sensing=True)
    bear = bearing(pos, state.tgt_pos)
    r = np.maximum(distance(pos, state.tgt_pos), ch.d_min)
    steer = np.asarray(action.theta_sense, float)
    g_tx = _gain_matrix(steer, bear, gtx, sig, side)
    g_rx = _gain_matrix(steer, bear, grx, sig, side)
    p = np.asarray(action.p_sense, float)[:, None]
    return sp.c_radar * p * g_tx * g_rx * state.rcs[None, :] / (r ** 4 * ch.noise_power)


def echo_snr(bs: BSConfig, tgt_pos, rcs: float, p_sense: float, theta_sense: float,
             ch: ChannelParams, sp: SensingParams) -> float:
    """Single-link radar range equation."""
    b = float(bearing(np.array(bs.pos), np.asarray(tgt_pos, float))[0, 0])
    r = max(float(distance(np.array(bs.pos), np.asarray(tgt_pos, float))[0, 0]), ch.d_min)
    g_tx = beam_gain(theta_sense, b, bs.g_max_tx, bs.sense_sigma, bs.sidelobe)
    g_rx = beam_gain(theta_sense, b, bs.g_rx, bs.sense_sigma, bs.sidelobe)
    return float(sp.c_radar * p_sense * g_tx * g_rx * rcs / (r ** 4 * ch.noise_power))


def estimate_sigma(snr, sp: SensingParams):
    snr = np.asarray(snr, dtype=float)
    with np.errstate(divide="ignore"):
        raw = np.where(snr > 0, sp.c_est / np.sqrt(np.where(snr > 0, snr, 1.0)), np.inf)
    return np.clip(raw, sp.sigma_est_min, sp.sigma_est_max)


def generate_sensing_estimates(state: WorldState, action: Action, ch: ChannelParams, bss,
                               sp: SensingParams, rng: np.random.Generator) -> SensingEstimates:
    snr = echo_snr_matrix(state, action, ch, bss, sp)
    best = np.argmax(snr, axis=0)
    best_snr = snr[best, np.arange(snr.shape[1])]
    sigma = estimate_sigma(best_snr, sp)
    noise = rng.standard_normal(state.tgt_pos.shape)
    est = state.tgt_pos + noise * sigma[:, None]
    return SensingEstimates(
        ids=np.arange(len(sigma)), est_pos=est, est_sigma=sigma, snr=best_snr, bs=best,
    )


def sensing_mse(true_pos, est_pos) -> float:
    true_pos = np.asarray(true_pos, dtype=float).reshape(-1, 2)
    est_pos = np.asarray(est_pos, dtype=float).reshape(-1, 2)
    if true_pos.shape != est_pos.shape:
        raise ValueError(f"length mismatch: {len(true_pos)} true vs {len(est_pos)} estimated")
    if len(true_pos) == 0:
        raise ValueError("need at least one target")
    return float(np.mean(np.sum((est_pos - true_pos) ** 2, axis=1)))


# -- kinematics ----------------------------------------------------------------

def _reflect(pos, vel, lo, hi):
    pos = pos.copy()
    vel = vel.copy()
    for _ in range(2):
        below = pos < lo
        pos[below] = 2 * lo[np.nonzero(below)[1]] - pos[below]
        vel[below] = -vel[below]
        above = pos > hi
        pos[above] = 2 * hi[np.nonzero(above)[1]] - pos[above]
        vel[above] = -vel[above]
    return pos, vel


def advance_kinematics(state: WorldState, dt: float, rng: np.random.Generator,
                       arena=(500.0, 500.0)) -> WorldState:
    """Constant-velocity step with reflective arena walls and a fresh fading draw."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    lo = np.zeros(2)
    hi = np.asarray(arena, dtype=float)
    ue_pos, ue_vel = _reflect(state.ue_pos + state.ue_vel * dt, state.ue_vel, lo, hi)
    tgt_pos, tgt_vel = _reflect(state.tgt_pos + state.tgt_vel * dt, state.tgt_vel, lo, hi)
    fading = rng.exponential(1.0, size=state.fading.shape)
    return replace(
        state, t=state.t + dt, ue_pos=ue_pos, ue_vel=ue_vel,
        tgt_pos=tgt_pos, tgt_vel=tgt_vel, fading=fading,
        serving=state.serving.copy(), rcs=state.rcs.copy(),
    )


def associate(ue_pos, bss, ch: ChannelParams) -> np.ndarray:
    """Serving BS per UE: strongest mean received power at boresight."""
    pos, gtx, grx, _, _ = _bs_arrays(bss)
    mean_power = gtx[:, None] * grx[:, None] * path_loss(distance(pos, ue_pos), ch)
    return np.argmax(mean_power, axis=0)


# -- environment ----------------------------------------------------------------

@dataclass(frozen=True)
class World:
    """Bundles the static scenario description used by the step functions."""

    bss: tuple[BSConfig, ...]
    channel: ChannelParams
    sensing: SensingParams
    arena: tuple[float, float] = (500.0, 500.0)
    n_ue: int = 6
    n_tgt: int = 3
    v_min: float = 0.0
    v_max: float = 20.0
    rcs_range: tuple[float, float] = (1.0, 10.0)
    dt: float = 0.01
    spawn_margin: float = 5.0
    reassociate: bool = False  # refresh serving BSs after every kinematic step

    @property
    def n_bs(self) -> int:
        return len(self.bss)

    @property
    def bs_pos(self) -> np.ndarray:
        return np.array([b.pos for b in self.bss], dtype=float)

    def _spawn(self, n, rng):
        m = self.spawn_margin
        pos = np.column_stack([
            rng.uniform(m, self.arena[0] - m, n),
            rng.uniform(m, self.arena[1] - m, n),
        ])
        speed = rng.uniform(self.v_min, self.v_max, n)
        heading = rng.uniform(-np.pi, np.pi, n)
        vel = np.column_stack([speed * np.cos(heading), speed * np.sin(heading)])
        return pos, vel

    def reset(self, rng: np.random.Generator) -> WorldState:
        ue_pos, ue_vel = self._spawn(self.n_ue, rng)
        tgt_pos, tgt_vel = self._spawn(self.n_tgt, rng)
        rcs = rng.uniform(*self.rcs_range, self.n_tgt)
        fading = rng.exponential(1.0, size=(self.n_bs, self.n_ue))
        return WorldState(
            t=0.0, ue_pos=ue_pos, ue_vel=ue_vel,
            serving=associate(ue_pos, self.bss, self.channel),
            tgt_pos=tgt_pos, tgt_vel=tgt_vel, rcs=rcs, fading=fading,
        )

    def advance(self, state: WorldState, rng: np.random.Generator, dt: float | None = None) -> WorldState:
        nxt = advance_kinematics(state, self.dt if dt is None else dt, rng, self.arena)
        if self.reassociate:
            nxt.serving = associate(nxt.ue_pos, self.bss, self.channel)
        return nxt

    def sense(self, state: WorldState, action: Action, rng: np.random.Generator) -> SensingEstimates:
        return generate_sensing_estimates(state, action, self.channel, self.bss, self.sensing, rng)

    def metrics(self, state: WorldState, action: Action, rng: np.random.Generator) -> GroundTruthMetrics:
        m = compute_rates(state, action, self.channel, self.bss)
        est = self.sense(state, action, rng)
        sq = np.sum((est.est_pos - state.tgt_pos) ** 2, axis=1)
        m.per_target_sq_err = sq
        m.mse = float(sq.mean())
        m.sensing = est
        return m

    def step(self, state: WorldState, action: Action, rng: np.random.Generator):
        """Evaluate ``action`` on the current state, then advance one control step."""
        m = self.metrics(state, action, rng)
        return self.advance(state, rng), m
