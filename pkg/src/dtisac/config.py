"""Simulation configuration: one JSON document, strictly validated.

Unknown keys anywhere in the document are rejected. Every section has
defaults, so ``{}`` is a valid config.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .policy.actions import PowerBudget
from .policy.features import FeatureScales
from .policy.ppo import PPOConfig
from .policy.reward import RewardWeights
from .telemetry import DelayModel, TelemetryNoise
from .twin import EKFParams
from .world import BSConfig, ChannelParams, SensingParams, World, db_to_lin


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldSection:
    n_bs: int = 3
    n_ue: int = 6
    n_tgt: int = 3
    arena: tuple[float, float] = (120.0, 120.0)
    bs_sites: tuple[tuple[float, float], ...] = ((20.0, 20.0), (100.0, 20.0), (60.0, 100.0))
    v_min: float = 0.0
    v_max: float = 20.0
    rcs_range: tuple[float, float] = (1.0, 10.0)
    dt: float = 0.01
    episode_length: int = 500
    spawn_margin: float = 5.0
    reassociate: bool = True


@dataclass(frozen=True)
class AntennaSection:
    g_max_tx_dbi: float = 15.0
    g_rx_dbi: float = 10.0
    beamwidth_deg: float = 0.4
    sidelobe_db: float = -20.0  # pattern floor relative to the peak
    sense_beamwidth_deg: float | None = 0.75  # None: same as beamwidth_deg


@dataclass(frozen=True)
class ChannelSection:
    bandwidth_hz: float = 20e6
    noise_psd_dbm_hz: float = -174.0
    pathloss_exp: float = 3.2
    pathloss_const_db: float = -30.0
    d_min: float = 1.0


@dataclass(frozen=True)
class SensingSection:
    c_radar: float = 2e-7
    c_est: float = 5.0
    sigma_est_min: float = 0.05
    sigma_est_max: float = 10.0


@dataclass(frozen=True)
class TelemetrySection:
    mean_ms: float = 50.0
    std_ms: float = 15.0
    ue_pos_sigma: float = 0.1
    target_passthrough: bool = True
    acq_vel_sigma: float = 1.0  # velocity accuracy of the reset-time acquisition
    buffer_capacity: int = 64


@dataclass(frozen=True)
class TwinSection:
    q_scale: float = 100.0
    r_floor: float = 1e-4
    p_ref_w: float = 0.5
    reflect: bool = True  # fold predictions at the known arena walls


@dataclass(frozen=True)
class RewardSection:
    w1: float = 1.0
    w2: float = 0.5
    w3: float = 0.2
    rate_norm: float | None = None  # None: N_UE * B * log2(1 + 10)
    mse_eps: float = 0.1


@dataclass(frozen=True)
class FeatureSection:
    pos: float = 50.0
    vel: float = 10.0
    csi_center: float = 4.0
    csi_scale: float = 2.0
    trace_center: float = 0.5
    trace_scale: float = 1.0
    lag: float = 0.05


@dataclass(frozen=True)
class PPOSection:
    gamma: float = 0.9
    lam: float = 0.8
    clip_eps: float = 0.2
    lr: float = 1e-3
    epochs: int = 10
    minibatch: int = 256
    entropy_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    rollout_steps: int = 2048
    hidden: tuple[int, int] = (64, 64)
    init_log_std_power: float = 0.0
    init_log_std_angle: float = -0.7
    angle_offset_deg: float = 0.2  # max steering offset from the geometric anchor
    sense_anchor: str = "unique"  # "unique" target matching or "nearest" target
    total_steps: int = 200_000
    checkpoint_every: int = 10
    reward_scaling: bool = True
    # training episodes cycle through this many fixed scenarios (0: fresh scenario every episode)
    scenario_pool: int = 40


@dataclass(frozen=True)
class HarnessSection:
    r_min_bps: float = 5e5
    mse_max: float = 25.0
    train_latency_ms: float = 50.0
    train_std_ms: float = 15.0
    unaware_train_latency_ms: float = 0.0
    # "proportional": sweep jitter std = latency * train_std/train_latency; "fixed": telemetry.std_ms
    sweep_jitter: str = "proportional"
    latencies_ms: tuple[float, ...] = (0.0, 10.0, 25.0, 50.0, 75.0, 100.0)
    eval_seeds: int = 20
    checkpoint_dir: str = "checkpoints"


@dataclass(frozen=True)
class SimConfig:
    master_seed: int = 0
    method: str = "dt_ekf_ppo"
    p_max_dbm: float = 30.0
    world: WorldSection = field(default_factory=WorldSection)
    antenna: AntennaSection = field(default_factory=AntennaSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    telemetry: TelemetrySection = field(default_factory=TelemetrySection)
    twin: TwinSection = field(default_factory=TwinSection)
    reward: RewardSection = field(default_factory=RewardSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    ppo: PPOSection = field(default_factory=PPOSection)
    harness: HarnessSection = field(default_factory=HarnessSection)

    # -- builders ------------------------------------------------------------

    def build_world(self) -> World:
        w, a = self.world, self.antenna
        sidelobe = float(db_to_lin(a.sidelobe_db))
        bss = tuple(
            BSConfig(
                id=i, pos=tuple(site),
                g_max_tx=float(db_to_lin(a.g_max_tx_dbi)),
                g_rx=float(db_to_lin(a.g_rx_dbi)),
                beamwidth_sigma=float(np.deg2rad(a.beamwidth_deg)),
                sidelobe=sidelobe,
                sense_beamwidth_sigma=None if a.sense_beamwidth_deg is None
                else float(np.deg2rad(a.sense_beamwidth_deg)),
            )
            for i, site in enumerate(w.bs_sites)
        )
        return World(
            bss=bss, channel=self.channel_params(), sensing=self.sensing_params(),
            arena=tuple(w.arena), n_ue=w.n_ue, n_tgt=w.n_tgt,
            v_min=w.v_min, v_max=w.v_max, rcs_range=tuple(w.rcs_range), dt=w.dt,
            spawn_margin=w.spawn_margin, reassociate=w.reassociate,
        )

    def channel_params(self) -> ChannelParams:
        c = self.channel
        return ChannelParams(bandwidth=c.bandwidth_hz, noise_psd=c.noise_psd_dbm_hz,
                             pathloss_exp=c.pathloss_exp, pathloss_const_db=c.pathloss_const_db,
                             d_min=c.d_min)

    def sensing_params(self) -> SensingParams:
        return SensingParams(**dataclasses.asdict(self.sensing))

    def budget(self) -> PowerBudget:
        return PowerBudget(p_max=float(db_to_lin(self.p_max_dbm - 30.0)))

    def reward_weights(self) -> RewardWeights:
        r = self.reward
        norm = r.rate_norm
        if norm is None:
            norm = self.world.n_ue * self.channel.bandwidth_hz * np.log2(11.0)
        return RewardWeights(w1=r.w1, w2=r.w2, w3=r.w3, rate_norm=float(norm), mse_eps=r.mse_eps)

    def feature_scales(self) -> FeatureScales:
        return FeatureScales(**dataclasses.asdict(self.features))

    def ekf_params(self) -> EKFParams:
        return EKFParams(q_scale=self.twin.q_scale, r_floor=self.twin.r_floor)

    def telemetry_noise(self) -> TelemetryNoise:
        t = self.telemetry
        return TelemetryNoise(ue_pos_sigma=t.ue_pos_sigma, target_passthrough=t.target_passthrough)

    def delay_model(self, mean_ms: float | None = None, std_ms: float | None = None) -> DelayModel:
        t = self.telemetry
        return DelayModel(mean_ms=t.mean_ms if mean_ms is None else mean_ms,
                          std_ms=t.std_ms if std_ms is None else std_ms,
                          step_ms=self.world.dt * 1000.0)

    def sweep_delay_model(self, latency_ms: float) -> DelayModel:
        h = self.harness
        if h.sweep_jitter == "proportional":
            ratio = h.train_std_ms / h.train_latency_ms if h.train_latency_ms > 0 else 0.0
            return self.delay_model(latency_ms, latency_ms * ratio)
        return self.delay_model(latency_ms, self.telemetry.std_ms)

    def ppo_config(self) -> PPOConfig:
        p = self.ppo
        return PPOConfig(gamma=p.gamma, lam=p.lam, clip_eps=p.clip_eps, lr=p.lr, epochs=p.epochs,
                         minibatch=p.minibatch, entropy_coef=p.entropy_coef, vf_coef=p.vf_coef,
                         max_grad_norm=p.max_grad_norm, rollout_steps=p.rollout_steps,
                         hidden=tuple(p.hidden))

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git blob-style SHA-1 of the canonical JSON."""
        body = self.canonical_json().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    def replace(self, **sections) -> "SimConfig":
        """Shallow override, e.g. ``cfg.replace(telemetry={"mean_ms": 0})``."""
        merged = self.to_dict()
        for key, val in sections.items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **val}
            else:
                merged[key] = val
        return from_dict(merged)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return _build(tp, value, path)
    if origin is typing.Union or (origin is not None and str(origin) == "types.UnionType"):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        if not np.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def _build(cls, data: dict, path: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    return cls(**kwargs)


METHODS = ("dt_ekf_ppo", "dt_only", "delayed_ppo", "unaware_ppo", "heuristic_raw")


def validate(cfg: SimConfig) -> SimConfig:
    w = cfg.world
    errs = []
    if cfg.method not in METHODS:
        errs.append(f"method must be one of {METHODS}, got {cfg.method!r}")
    if min(w.n_bs, w.n_ue, w.n_tgt) < 1:
        errs.append("world: entity counts must be >= 1")
    if len(w.bs_sites) != w.n_bs:
        errs.append(f"world: {len(w.bs_sites)} bs_sites for n_bs={w.n_bs}")
    for site in w.bs_sites:
        if not (0 <= site[0] <= w.arena[0] and 0 <= site[1] <= w.arena[1]):
            errs.append(f"world: BS site {site} outside the arena")
    if min(w.arena) <= 2 * w.spawn_margin:
        errs.append("world: arena too small for spawn_margin")
    if not 0 <= w.v_min <= w.v_max:
        errs.append("world: need 0 <= v_min <= v_max")
    if not 0 < w.rcs_range[0] <= w.rcs_range[1]:
        errs.append("world: rcs_range must be positive and ordered")
    if w.dt <= 0 or w.episode_length < 1:
        errs.append("world: dt and episode_length must be positive")
    if cfg.antenna.beamwidth_deg <= 0:
        errs.append("antenna: beamwidth_deg must be positive")
    if cfg.antenna.sense_beamwidth_deg is not None and cfg.antenna.sense_beamwidth_deg <= 0:
        errs.append("antenna: sense_beamwidth_deg must be positive")
    if cfg.antenna.sidelobe_db >= 0:
        errs.append("antenna: sidelobe_db must be negative")
    if cfg.channel.bandwidth_hz <= 0 or cfg.channel.pathloss_exp <= 0 or cfg.channel.d_min < 1:
        errs.append("channel: bandwidth, pathloss_exp must be > 0 and d_min >= 1")
    s = cfg.sensing
    if not (s.c_radar > 0 and s.c_est > 0 and 0 < s.sigma_est_min <= s.sigma_est_max):
        errs.append("sensing: constants must be positive with sigma_est_min <= sigma_est_max")
    t = cfg.telemetry
    if min(t.mean_ms, t.std_ms, t.ue_pos_sigma, t.acq_vel_sigma) < 0 or t.buffer_capacity < 1:
        errs.append("telemetry: delays and noise must be >= 0, buffer_capacity >= 1")
    if cfg.twin.q_scale <= 0 or cfg.twin.r_floor <= 0 or cfg.twin.p_ref_w <= 0:
        errs.append("twin: q_scale, r_floor, p_ref_w must be positive")
    r = cfg.reward
    if min(r.w1, r.w2, r.w3, r.mse_eps) <= 0 or (r.rate_norm is not None and r.rate_norm <= 0):
        errs.append("reward: weights, rate_norm and mse_eps must be positive")
    p = cfg.ppo
    if p.epochs < 1 or p.minibatch < 1 or p.rollout_steps < 1 or p.total_steps < 0:
        errs.append("ppo: epochs, minibatch, rollout_steps must be >= 1 and total_steps >= 0")
    if not 0 < p.clip_eps < 1 or p.lr <= 0:
        errs.append("ppo: need 0 < clip_eps < 1 and lr > 0")
    if p.scenario_pool < 0:
        errs.append("ppo: scenario_pool must be >= 0")
    if p.sense_anchor not in ("unique", "nearest"):
        errs.append("ppo: sense_anchor must be 'unique' or 'nearest'")
    if not 0 < p.angle_offset_deg <= 180:
        errs.append("ppo: angle_offset_deg must be in (0, 180]")
    h = cfg.harness
    if h.sweep_jitter not in ("proportional", "fixed"):
        errs.append("harness: sweep_jitter must be 'proportional' or 'fixed'")
    if any(x < 0 for x in h.latencies_ms) or h.eval_seeds < 1:
        errs.append("harness: latencies must be >= 0 and eval_seeds >= 1")
    if errs:
        raise ConfigError("; ".join(errs))
    return cfg


def from_dict(data: dict) -> SimConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return validate(_build(SimConfig, data, ""))


def load_config(path) -> SimConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)
