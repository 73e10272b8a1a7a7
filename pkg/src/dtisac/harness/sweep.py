"""Latency sweep: every (method, latency, seed) cell, then a median summary."""
from __future__ import annotations

import logging
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..config import METHODS, SimConfig
from ..policy.actions import DIMS_PER_BS
from ..policy.features import feature_dim
from ..policy.ppo import PolicyParams, load_checkpoint
from .episode import Controller, RunRecord, derive_seed, run_episode
from .training import LEARNED_METHODS, pathway_of

log = logging.getLogger(__name__)

THREADS_ENV = "DTISAC_THREADS"


class MissingCheckpoint(FileNotFoundError):
    pass


def worker_count() -> int:
    """Worker processes for sweeps; ``DTISAC_THREADS`` overrides the default of 1."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def scenario_seed(master_seed: int, seed_index: int) -> int:
    """Scenario seed shared by every method and latency (common random numbers)."""
    return derive_seed(master_seed, "scenario", seed_index)


def policy_seed(master_seed: int, method: str, latency_ms: float, seed_index: int) -> int:
    return derive_seed(master_seed, method, float(latency_ms), seed_index)


def checkpoint_path(checkpoint_dir, method: str) -> Path:
    return Path(checkpoint_dir) / f"{method}.json"


def load_policy(cfg: SimConfig, path) -> PolicyParams:
    w = cfg.world
    params, doc = load_checkpoint(path, feature_dim(w.n_ue, w.n_tgt), w.n_bs * DIMS_PER_BS)
    if doc.get("config_hash") != cfg.content_hash():
        log.warning("%s was trained under config %s, evaluating under %s",
                    path, doc.get("config_hash"), cfg.content_hash())
    return params


def build_controllers(cfg: SimConfig, methods, checkpoint_dir=None) -> dict[str, Controller]:
    """Controllers for ``methods``; fails before any simulation if a checkpoint is missing."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    learned = [m for m in methods if m in LEARNED_METHODS]
    if learned and checkpoint_dir is None:
        raise MissingCheckpoint(f"no checkpoint directory given for {learned}")
    missing = [str(checkpoint_path(checkpoint_dir, m)) for m in learned
               if not checkpoint_path(checkpoint_dir, m).is_file()]
    if missing:
        raise MissingCheckpoint("missing checkpoints: " + ", ".join(missing))
    out = {}
    for m in methods:
        params = load_policy(cfg, checkpoint_path(checkpoint_dir, m)) if m in learned else None
        out[m] = Controller(m, pathway_of(m), params)
    return out


def _run_cell(args) -> list[RunRecord]:
    cfg, controller, latency, idx = args
    return run_episode(cfg, controller, latency, scenario_seed(cfg.master_seed, idx),
                       policy_seed=policy_seed(cfg.master_seed, controller.name, latency, idx)).records


def run_sweep(cfg: SimConfig, methods, latencies, n_seeds: int, checkpoint_dir=None,
              workers: int | None = None, controllers: dict | None = None) -> list[RunRecord]:
    """All records, ordered by method (as given), latency (as given), seed, step.

    ``controllers`` bypasses checkpoint loading for the methods it names.
    """
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    if any(lat < 0 for lat in latencies):
        raise ValueError("latencies must be >= 0")
    given = dict(controllers or {})
    controllers = {**build_controllers(cfg, [m for m in methods if m not in given], checkpoint_dir),
                   **given}
    cells = [(cfg, controllers[m], float(lat), i) for m in methods for lat in latencies
             for i in range(n_seeds)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell, cells))
    else:
        chunks = [_run_cell(c) for c in cells]
    return [r for chunk in chunks for r in chunk]


def latency_key(latency_ms: float) -> str:
    return format(float(latency_ms), "g")


def _median_seed_rate(rs: list[RunRecord]) -> float:
    per_seed: dict[int, list[bool]] = defaultdict(list)
    for r in rs:
        per_seed[r.seed].append(r.violation)
    return float(np.median([np.mean(v) for v in per_seed.values()]))


def summarize(records: list[RunRecord], cfg: SimConfig) -> dict:
    """Per (method, latency) medians keyed ``summary[method][latency_key]``.

    ``violation_prob`` pools all steps; ``median_violation_prob`` is the
    median over seeds of each seed's violation rate. Retention and normalized
    sensing error are ratios to the same method's zero-latency cell and are
    ``None`` when that cell is absent.
    """
    p_total = cfg.world.n_bs * cfg.budget().p_max
    groups: dict[tuple[str, float], list[RunRecord]] = defaultdict(list)
    order: list[tuple[str, float]] = []
    for r in records:
        key = (r.method, float(r.latency_ms))
        if key not in groups:
            order.append(key)
        groups[key].append(r)
    out: dict[str, dict] = {}
    for method, lat in order:
        rs = groups[(method, lat)]
        out.setdefault(method, {})[latency_key(lat)] = {
            "latency_ms": lat,
            "median_sum_rate_bps": float(np.median([r.sum_rate for r in rs])),
            "median_mse_m2": float(np.median([r.mse for r in rs])),
            "median_power_ratio": float(np.median([r.total_power for r in rs])) / p_total,
            "violation_prob": float(np.mean([r.violation for r in rs])),
            "median_violation_prob": _median_seed_rate(rs),
            "median_reward": float(np.median([r.reward for r in rs])),
            "n_records": len(rs),
            "n_seeds": len({r.seed for r in rs}),
        }
    for cells in out.values():
        base = cells.get(latency_key(0.0))
        for cell in cells.values():
            if base is None:
                cell["throughput_retention"] = None
                cell["normalized_sensing_error"] = None
                continue
            tp0, mse0 = base["median_sum_rate_bps"], base["median_mse_m2"]
            cell["throughput_retention"] = cell["median_sum_rate_bps"] / tp0 if tp0 > 0 else None
            cell["normalized_sensing_error"] = cell["median_mse_m2"] / mse0 if mse0 > 0 else None
    return out
