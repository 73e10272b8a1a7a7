"""Gaussian actor-critic and the clipped-surrogate PPO update."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .networks import MLP, Adam, flatten, unflatten_into

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
LOG_2PI = np.log(2.0 * np.pi)
CHECKPOINT_FORMAT = "dtisac-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 10
    minibatch: int = 64
    entropy_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    rollout_steps: int = 2048
    hidden: tuple[int, int] = (64, 64)


class PolicyParams:
    """Actor mean network, state-independent log-std, and critic."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), rng=None,
                 init_log_std=0.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.actor = MLP((obs_dim, *hidden, act_dim), rng, out_scale=0.01)
        self.critic = MLP((obs_dim, *hidden, 1), rng, out_scale=1.0)
        self.log_std = np.broadcast_to(np.asarray(init_log_std, dtype=float), (act_dim,)).copy()
        self.adam: Adam | None = None

    def arrays(self) -> list[np.ndarray]:
        return self.actor.params() + self.critic.params() + [self.log_std]

    def named_arrays(self):
        out = []
        for net_name, net in (("actor", self.actor), ("critic", self.critic)):
            for k, a in enumerate(net.params()):
                out.append((f"{net_name}.{'W' if k % 2 == 0 else 'b'}{k // 2}", a))
        out.append(("log_std", self.log_std))
        return out

    def get_flat(self) -> np.ndarray:
        return flatten(self.arrays())

    def set_flat(self, flat) -> None:
        unflatten_into(self.arrays(), np.asarray(flat, dtype=float))

    def copy(self) -> "PolicyParams":
        other = PolicyParams.__new__(PolicyParams)
        other.obs_dim, other.act_dim = self.obs_dim, self.act_dim
        other.actor = MLP.__new__(MLP)
        other.critic = MLP.__new__(MLP)
        for src, dst in ((self.actor, other.actor), (self.critic, other.critic)):
            dst.sizes = src.sizes
            dst.weights = [w.copy() for w in src.weights]
            dst.biases = [b.copy() for b in src.biases]
        other.log_std = self.log_std.copy()
        other.adam = None
        return other

    @property
    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)


def _check_dim(params: PolicyParams, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.obs_dim:
        raise ValueError(f"feature length {x.shape[-1]} != network input {params.obs_dim}")
    return x


def gaussian_log_prob(a, mean, log_std) -> np.ndarray:
    z = (a - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def act(params: PolicyParams, features, rng: np.random.Generator | None = None,
        deterministic: bool = False):
    """Sample (or take the mean of) the Gaussian policy; returns ``(raw_action, log_prob)``."""
    x = _check_dim(params, features)
    single = x.ndim == 1
    mean = params.actor(x)
    ls = params.clamped_log_std
    if deterministic:
        a = mean.copy()
    else:
        if rng is None:
            raise ValueError("stochastic act needs an rng")
        a = mean + np.exp(ls) * rng.standard_normal(mean.shape)
    lp = gaussian_log_prob(a, mean, ls)
    if single:
        return a[0], float(lp[0])
    return a, lp


def value(params: PolicyParams, features):
    x = _check_dim(params, features)
    v = params.critic(x)[:, 0]
    return float(v[0]) if np.ndim(features) == 1 else v


# -- advantage estimation -----------------------------------------------------

def compute_gae(rewards, values, dones, last_value: float, gamma: float, lam: float,
                normalize: bool = True):
    """GAE(gamma, lambda) over a flat rollout.

    ``dones[t]`` marks that step ``t`` ended an episode (no bootstrap across it).
    ``last_value`` bootstraps the final step when it is not terminal. Returns
    ``(advantages, returns)``; returns are computed from the un-normalized
    advantages.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty trajectory")
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_v, gae = 0.0, 0.0
        else:
            next_v = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v - values[t]
        gae = delta + gamma * lam * gae
        adv[t] = gae
    returns = adv + values
    if normalize:
        adv = normalize_advantages(adv)
    return adv, returns


def normalize_advantages(adv):
    """Zero mean, unit std; exactly invariant to positive rescaling (a constant batch maps to zeros)."""
    adv = np.asarray(adv, dtype=float)
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 0 else np.zeros_like(adv)


# -- loss ----------------------------------------------------------------------

def clipped_objective(ratio, adv, clip_eps):
    """Per-sample clipped surrogate ``min(r A, clip(r) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_prob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def take(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.old_log_prob[idx],
                     self.advantages[idx], self.returns[idx])


def ppo_loss_and_grad(params: PolicyParams, batch: Batch, clip_eps: float,
                      entropy_coef: float, vf_coef: float):
    """Scalar loss (to minimize) and its exact gradient as a flat vector."""
    B = len(batch)
    mean, a_acts = params.actor.forward(batch.obs)
    v, c_acts = params.critic.forward(batch.obs)
    v = v[:, 0]
    ls_raw = params.log_std
    ls = params.clamped_log_std
    std = np.exp(ls)
    diff = batch.actions - mean
    z = diff / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(ls) - 0.5 * params.act_dim * LOG_2PI
    ratio = np.exp(logp - batch.old_log_prob)
    adv = batch.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv
    obj = np.minimum(surr1, surr2)
    policy_loss = -obj.mean()
    v_err = v - batch.returns
    value_loss = np.mean(v_err ** 2)
    entropy = np.sum(ls) + 0.5 * params.act_dim * (1.0 + LOG_2PI)
    loss = policy_loss + vf_coef * value_loss - entropy_coef * entropy

    # d loss / d logp, zero where the clipped branch is the active minimum
    active = surr1 <= surr2
    dlogp = np.where(active, -adv * ratio / B, 0.0)
    dmean = dlogp[:, None] * diff / std ** 2
    dls = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - entropy_coef
    dls = np.where((ls_raw >= LOG_STD_MIN) & (ls_raw <= LOG_STD_MAX), dls, 0.0)
    g_actor = params.actor.backward(a_acts, dmean)
    dv = vf_coef * 2.0 * v_err / B
    g_critic = params.critic.backward(c_acts, dv[:, None])
    grad = flatten(g_actor + g_critic + [dls])
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "approx_kl": float(np.mean(batch.old_log_prob - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    }
    return loss, grad, stats


def ppo_loss(params: PolicyParams, batch: Batch, clip_eps, entropy_coef, vf_coef) -> float:
    return ppo_loss_and_grad(params, batch, clip_eps, entropy_coef, vf_coef)[0]


class NonFiniteLoss(RuntimeError):
    pass


def ppo_update(params: PolicyParams, batch: Batch, cfg: PPOConfig, rng: np.random.Generator):
    """Several epochs of minibatch Adam steps on the clipped objective.

    Parameters are updated in place. On a non-finite loss or gradient the
    parameters are restored to their values on entry and
    :class:`NonFiniteLoss` is raised.
    """
    if params.adam is None:
        params.adam = Adam(params.get_flat().size, lr=cfg.lr)
    start = params.get_flat()
    adam_state = (params.adam.m.copy(), params.adam.v.copy(), params.adam.t)
    n = len(batch)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.minibatch):
            mb = batch.take(order[s:s + cfg.minibatch])
            loss, grad, stats = ppo_loss_and_grad(params, mb, cfg.clip_eps,
                                                  cfg.entropy_coef, cfg.vf_coef)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                params.set_flat(start)
                params.adam.m, params.adam.v, params.adam.t = adam_state
                raise NonFiniteLoss(f"non-finite PPO loss ({loss}) at minibatch {len(history)}")
            gnorm = float(np.linalg.norm(grad))
            if gnorm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / gnorm)
            params.set_flat(params.adam.step(params.get_flat(), grad))
            stats["grad_norm"] = gnorm
            history.append(stats)
    summary = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    return params, summary


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(params: PolicyParams, path, config_hash: str, meta: dict | None = None) -> Path:
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "hidden": list(params.actor.sizes[1:-1]),
        "meta": meta or {},
        "arrays": [
            {"name": name, "shape": list(a.shape), "data": [float(x) for x in np.ravel(a)]}
            for name, a in params.named_arrays()
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, expect_obs_dim: int | None = None, expect_act_dim: int | None = None):
    """Returns ``(params, doc)``; raises :class:`CheckpointError` on any mismatch."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    obs_dim, act_dim = doc["obs_dim"], doc["act_dim"]
    if expect_obs_dim is not None and obs_dim != expect_obs_dim:
        raise CheckpointError(f"{path}: obs_dim {obs_dim} != expected {expect_obs_dim}")
    if expect_act_dim is not None and act_dim != expect_act_dim:
        raise CheckpointError(f"{path}: act_dim {act_dim} != expected {expect_act_dim}")
    params = PolicyParams(obs_dim, act_dim, hidden=tuple(doc["hidden"]))
    named = params.named_arrays()
    stored = doc["arrays"]
    if [s["name"] for s in stored] != [n for n, _ in named]:
        raise CheckpointError(f"{path}: layer list does not match network layout")
    for (name, a), s in zip(named, stored):
        if tuple(s["shape"]) != a.shape:
            raise CheckpointError(f"{path}: {name} has shape {tuple(s['shape'])}, expected {a.shape}")
        a[...] = np.asarray(s["data"], dtype=float).reshape(a.shape)
    return params, doc


__all__ = [
    "PPOConfig", "PolicyParams", "Batch", "act", "value", "compute_gae", "normalize_advantages",
    "clipped_objective", "ppo_loss", "ppo_loss_and_grad", "ppo_update", "NonFiniteLoss",
    "save_checkpoint", "load_checkpoint", "CheckpointError", "gaussian_log_prob",
]
