"""One closed-loop episode: world, delayed telemetry, twin, controller."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..config import SimConfig
from ..policy.actions import DIMS_PER_BS, project_action
from ..policy.features import featurize
from ..policy.heuristic import heuristic_policy, steering_anchors
from ..policy.ppo import PolicyParams, act, value
from ..policy.reward import power_ratio, reward
from ..telemetry import DelayModel, TelemetryBuffer, emit, emit_acquisition
from ..twin import BeliefState, DigitalTwin, raw_observation
from ..world import Action, GroundTruthMetrics

PATHWAYS = ("belief", "raw")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labels."""
    key = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


@dataclass
class Controller:
    """A heuristic (``params is None``) or a PPO actor, fed by one observation pathway."""

    name: str
    pathway: str
    params: PolicyParams | None = None

    def __post_init__(self):
        if self.pathway not in PATHWAYS:
            raise ValueError(f"pathway must be one of {PATHWAYS}")

    @property
    def learned(self) -> bool:
        return self.params is not None


@dataclass
class RunRecord:
    method: str
    latency_ms: float
    seed: int
    step: int
    sum_rate: float
    mse: float
    total_power: float
    violation: bool
    reward: float

    FIELDS = ("method", "latency_ms", "seed", "step", "sum_rate", "mse",
              "total_power", "violation", "reward")


@dataclass
class Trajectory:
    features: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float = 0.0

    def __len__(self):
        return len(self.rewards)


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    records: list[RunRecord]
    actions: list[Action] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    final_t: float = 0.0  # world clock after the last step

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.trajectory.rewards))


def violation_check(metrics: GroundTruthMetrics, r_min_bps: float, mse_max: float) -> bool:
    """QoS breach: some UE strictly below the rate floor, or MSE strictly above the ceiling."""
    return bool(np.min(metrics.per_ue_rate) < r_min_bps or metrics.mse > mse_max)


def acquisition_action(cfg: SimConfig, world, state) -> Action:
    """Beams used for the reset-time acquisition sweep, aimed at the true geometry."""
    truth = BeliefState(
        ue_mean=np.column_stack([state.ue_pos, state.ue_vel]), ue_cov=np.zeros((world.n_ue, 4, 4)),
        tgt_mean=np.column_stack([state.tgt_pos, state.tgt_vel]), tgt_cov=np.zeros((world.n_tgt, 4, 4)),
        csi_proxy=np.ones(world.n_ue), effective_lag=0.0,
    )
    return heuristic_policy(truth, world.bs_pos, state.serving, cfg.budget())


def run_episode(cfg: SimConfig, controller: Controller, latency_ms: float, seed: int,
                train_mode: bool = False, *, delay_model: DelayModel | None = None,
                policy_seed: int | None = None, method: str | None = None,
                collect_actions: bool = False, diagnostics: bool = False,
                world=None) -> EpisodeResult:
    """Run one episode.

    ``seed`` fixes the scenario (initial geometry, fading, sensing and
    telemetry noise); ``policy_seed`` fixes exploration noise. Evaluation
    (``train_mode=False``) uses the deterministic policy mean.
    """
    if latency_ms < 0:
        raise ValueError("latency must be >= 0")
    world = world if world is not None else cfg.build_world()
    if len(world.bss) != cfg.world.n_bs:
        raise ValueError("config inconsistency: BS count does not match world")
    method = method or controller.name
    delay = delay_model if delay_model is not None else cfg.sweep_delay_model(latency_ms)
    noise = cfg.telemetry_noise()
    budget = cfg.budget()
    weights = cfg.reward_weights()
    scales = cfg.feature_scales()
    h = cfg.harness
    dt = world.dt
    L = cfg.world.episode_length
    n_bs = world.n_bs
    bs_pos = world.bs_pos
    unique = cfg.ppo.sense_anchor == "unique"
    angle_scale = float(np.deg2rad(cfg.ppo.angle_offset_deg))

    world_ss, tel_ss = np.random.SeedSequence(seed).spawn(2)
    rng_world = np.random.default_rng(world_ss)
    rng_tel = np.random.default_rng(tel_ss)
    rng_pol = np.random.default_rng(derive_seed("policy", seed) if policy_seed is None else policy_seed)

    state = world.reset(rng_world)
    serving = state.serving.copy()
    prev_action = acquisition_action(cfg, world, state)
    buf = TelemetryBuffer(cfg.telemetry.buffer_capacity)
    init_pkt = emit_acquisition(state, world.sense(state, prev_action, rng_world), noise,
                                rng_tel, dt, cfg.telemetry.acq_vel_sigma)
    buf.push(init_pkt)
    twin = None
    if controller.pathway == "belief":
        twin = DigitalTwin(world.n_ue, world.n_tgt, dt, cfg.ekf_params(), world.bss,
                           world.channel, cfg.twin.p_ref_w,
                           arena=world.arena if cfg.twin.reflect else None)
        twin.reset(init_pkt, serving)

    obs_dim = None
    feats, acts, logps, rewards, values = [], [], [], [], []
    records: list[RunRecord] = []
    actions: list[Action] = []
    diag = {"belief_err": [], "raw_err": [], "lag": []} if diagnostics else {}

    def observe(step_idx):
        pkt = buf.newest_available(step_idx)
        if twin is not None:
            return twin.synchronize(pkt, step_idx), pkt
        return raw_observation(pkt, step_idx, serving, world.bss, world.channel, cfg.twin.p_ref_w), pkt

    for step in range(L):
        serving = state.serving
        if twin is not None:
            twin.serving = serving.copy()
        if step > 0:
            sens = world.sense(state, prev_action, rng_world)
            buf.push(emit(state, sens, noise, delay, rng_tel, dt))
        obs, pkt = observe(step)
        if diagnostics:
            truth = np.vstack([state.ue_pos, state.tgt_pos])
            est = np.vstack([obs.ue_pos, obs.tgt_pos])
            raw = np.vstack([pkt.ue_pos, pkt.tgt_pos])
            diag["belief_err"].append(float(np.mean(np.linalg.norm(est - truth, axis=1))))
            diag["raw_err"].append(float(np.mean(np.linalg.norm(raw - truth, axis=1))))
            diag["lag"].append(obs.effective_lag)

        if controller.learned:
            x = featurize(obs, bs_pos, serving, scales)
            obs_dim = obs_dim or x.size
            raw_a, logp = act(controller.params, x, rng_pol, deterministic=not train_mode)
            anchors = steering_anchors(obs, bs_pos, serving, unique_targets=unique)
            action = project_action(raw_a, budget, n_bs, anchors=anchors, angle_scale=angle_scale)
            if train_mode:
                feats.append(x)
                acts.append(raw_a)
                logps.append(logp)
                values.append(value(controller.params, x))
        else:
            action = heuristic_policy(obs, bs_pos, serving, budget)

        next_state, m = world.step(state, action, rng_world)
        r = reward(m, action, weights, budget)
        rewards.append(r)
        records.append(RunRecord(
            method=method, latency_ms=float(latency_ms), seed=int(seed), step=step,
            sum_rate=m.sum_rate, mse=m.mse, total_power=action.total_power,
            violation=violation_check(m, h.r_min_bps, h.mse_max), reward=r,
        ))
        if collect_actions:
            actions.append(action)
        state = next_state
        prev_action = action

    last_value = 0.0
    if controller.learned and train_mode:
        sens = world.sense(state, prev_action, rng_world)
        buf.push(emit(state, sens, noise, delay, rng_tel, dt))
        obs, _ = observe(L)
        last_value = value(controller.params, featurize(obs, bs_pos, serving, scales))

    act_dim = n_bs * DIMS_PER_BS
    traj = Trajectory(
        features=np.array(feats) if feats else np.zeros((0, obs_dim or 0)),
        actions=np.array(acts) if acts else np.zeros((0, act_dim)),
        log_probs=np.array(logps),
        rewards=np.array(rewards),
        values=np.array(values),
        dones=np.zeros(len(rewards), dtype=bool),
        last_value=last_value,
    )
    return EpisodeResult(traj, records, actions, diag, final_t=state.t)


def power_ratio_of(record: RunRecord, cfg: SimConfig) -> float:
    return record.total_power / (cfg.world.n_bs * cfg.budget().p_max)


__all__ = ["Controller", "RunRecord", "Trajectory", "EpisodeResult", "run_episode",
           "violation_check", "derive_seed", "power_ratio", "power_ratio_of"]
