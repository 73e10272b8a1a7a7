"""PPO training loop over whole closed-loop episodes."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import SimConfig
from ..policy.actions import DIMS_PER_BS
from ..policy.features import feature_dim
from ..policy.ppo import (Batch, NonFiniteLoss, PolicyParams, compute_gae, normalize_advantages,
                          ppo_update, save_checkpoint)
from ..telemetry import DelayModel
from .episode import Controller, derive_seed, run_episode

log = logging.getLogger(__name__)

LEARNED_METHODS = ("dt_ekf_ppo", "delayed_ppo", "unaware_ppo")


def pathway_of(method: str) -> str:
    return "belief" if method in ("dt_ekf_ppo", "dt_only") else "raw"


def training_delay(cfg: SimConfig, method: str) -> DelayModel:
    """Delay distribution a learned method is trained under."""
    h = cfg.harness
    if method == "unaware_ppo":
        return cfg.delay_model(h.unaware_train_latency_ms, 0.0)
    return cfg.delay_model(h.train_latency_ms, h.train_std_ms)


def init_params(cfg: SimConfig, method: str) -> PolicyParams:
    w = cfg.world
    obs_dim = feature_dim(w.n_ue, w.n_tgt)
    act_dim = w.n_bs * DIMS_PER_BS
    log_std = np.tile([cfg.ppo.init_log_std_power] * 2 + [cfg.ppo.init_log_std_angle] * 2, w.n_bs)
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "init", method))
    return PolicyParams(obs_dim, act_dim, tuple(cfg.ppo.hidden), rng, init_log_std=log_std)


class RunningStd:
    """Welford running variance, used to scale rewards by the spread of discounted returns."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.m2 / self.n)) if self.n > 1 else 1.0


@dataclass
class TrainResult:
    method: str
    params: PolicyParams
    episode_rewards: list[float] = field(default_factory=list)
    updates: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    stopped_early: bool = False

    def decile_medians(self) -> tuple[float, float]:
        """Median episode reward over the first and last 10% of episodes."""
        r = np.asarray(self.episode_rewards)
        k = max(1, len(r) // 10)
        return float(np.median(r[:k])), float(np.median(r[-k:]))


def train(cfg: SimConfig, method: str, out_dir=None, total_steps: int | None = None) -> TrainResult:
    """Train one learned method.

    Writes ``<method>.json`` (checkpoint), ``<method>_training.csv`` (one row
    per update) and ``<method>_episodes.csv`` into ``out_dir``. A zero step
    budget returns (and saves) the initial policy. A non-finite loss stops
    training and keeps the last good parameters.
    """
    if method not in LEARNED_METHODS:
        raise ValueError(f"{method!r} is not a learned method; choose from {LEARNED_METHODS}")
    p = cfg.ppo
    ppo_cfg = cfg.ppo_config()
    budget_steps = p.total_steps if total_steps is None else total_steps
    params = init_params(cfg, method)
    world = cfg.build_world()
    delay = training_delay(cfg, method)
    controller = Controller(method, pathway_of(method), params)
    upd_rng = np.random.default_rng(derive_seed(cfg.master_seed, "update", method))
    ret_std = RunningStd()
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(method, params)
    steps, episode, n_updates = 0, 0, 0
    while steps < budget_steps:
        chunks = []
        while sum(len(c[0]) for c in chunks) < ppo_cfg.rollout_steps and steps < budget_steps:
            res = run_episode(
                cfg, controller, delay.mean_ms,
                derive_seed(cfg.master_seed, "train-scenario", method,
                            episode % p.scenario_pool if p.scenario_pool else episode),
                train_mode=True, delay_model=delay,
                policy_seed=derive_seed(cfg.master_seed, "train-policy", method, episode),
                world=world,
            )
            tr = res.trajectory
            rewards = tr.rewards
            if p.reward_scaling:
                ret = 0.0
                for r in rewards:
                    ret = ppo_cfg.gamma * ret + r
                    ret_std.push(ret)
                rewards = rewards / (ret_std.std + 1e-8)
            # the episode end is a time limit, so bootstrap from the final value
            adv, rets = compute_gae(rewards, tr.values, tr.dones, tr.last_value,
                                    ppo_cfg.gamma, ppo_cfg.lam, normalize=False)
            chunks.append((tr.features, tr.actions, tr.log_probs, adv, rets))
            result.episode_rewards.append(res.mean_reward)
            steps += len(tr)
            episode += 1
        batch = Batch(*(np.concatenate(parts) for parts in zip(*chunks)))
        batch.advantages = normalize_advantages(batch.advantages)
        try:
            _, stats = ppo_update(params, batch, ppo_cfg, upd_rng)
        except NonFiniteLoss as exc:
            log.error("%s: %s; keeping the last good parameters", method, exc)
            result.stopped_early = True
            break
        n_updates += 1
        stats.update(update=n_updates, steps=steps, mean_reward=float(np.mean(result.episode_rewards[-len(chunks):])))
        result.updates.append(stats)
        log.info("%s update %d steps %d reward %.4f", method, n_updates, steps, stats["mean_reward"])
        if out is not None and p.checkpoint_every and n_updates % p.checkpoint_every == 0:
            _save(cfg, result, out, steps)
    if out is not None:
        result.checkpoint = _save(cfg, result, out, steps)
        write_curve(result, out / f"{method}_training.csv")
        write_episodes(result, out / f"{method}_episodes.csv")
    return result


def _save(cfg: SimConfig, result: TrainResult, out: Path, steps: int) -> Path:
    meta = {"method": result.method, "steps": steps, "episodes": len(result.episode_rewards),
            "master_seed": cfg.master_seed}
    return save_checkpoint(result.params, out / f"{result.method}.json", cfg.content_hash(), meta)


CURVE_FIELDS = ("update", "steps", "mean_reward", "loss", "policy_loss", "value_loss", "entropy",
                "approx_kl", "clip_frac", "grad_norm")


def _csv_writer(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\r\n")


def write_curve(result: TrainResult, path) -> None:
    """One row per PPO update."""
    fh, w = _csv_writer(path)
    with fh:
        w.writerow(CURVE_FIELDS)
        for u in result.updates:
            w.writerow([u[k] if k in ("update", "steps") else repr(float(u[k])) for k in CURVE_FIELDS])


def write_episodes(result: TrainResult, path) -> None:
    """Mean per-step reward of every training episode."""
    fh, w = _csv_writer(path)
    with fh:
        w.writerow(["episode", "mean_reward"])
        for i, r in enumerate(result.episode_rewards):
            w.writerow([i, repr(float(r))])
