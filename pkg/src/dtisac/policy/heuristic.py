"""Geometric baseline controller and the steering anchors shared with PPO."""
from __future__ import annotations

import numpy as np

from ..twin import BeliefState
from ..world import Action, bearing, distance
from .actions import PowerBudget


def assign_targets(bs_pos, tgt_pos, unique: bool = False) -> np.ndarray:
    """Target index sensed by each BS.

    ``unique=False``: nearest target per BS. ``unique=True``: greedy
    closest-pair matching so distinct BSs take distinct targets while any
    remain; leftover BSs fall back to their nearest target. Ties go to the
    lowest index in both modes.
    """
    d = distance(bs_pos, tgt_pos)
    nearest = np.argmin(d, axis=1)
    if not unique:
        return nearest
    out = nearest.copy()
    work = d.copy()
    for _ in range(min(work.shape)):
        i, k = np.unravel_index(np.argmin(work), work.shape)
        out[i] = k
        work[i, :] = np.inf
        work[:, k] = np.inf
    return out


def steering_anchors(obs: BeliefState, bs_pos, serving, unique_targets: bool = False) -> np.ndarray:
    """Comm and sense bearings per BS, shape ``(n_bs, 2)``.

    Comm points at the associated UE with the lowest SINR proxy (any UE,
    nearest first, if the BS has none); sense points at the assigned target.
    Ties go to the lowest index.
    """
    bs_pos = np.asarray(bs_pos, dtype=float)
    serving = np.asarray(serving)
    n_bs = len(bs_pos)
    ue_bear = bearing(bs_pos, obs.ue_pos)
    ue_d = distance(bs_pos, obs.ue_pos)
    out = np.empty((n_bs, 2))
    for i in range(n_bs):
        mine = np.flatnonzero(serving == i)
        if mine.size:
            j = mine[np.argmin(obs.csi_proxy[mine])]  # argmin keeps the first minimum
        else:
            j = int(np.argmin(ue_d[i]))
        out[i, 0] = ue_bear[i, j]
    k = assign_targets(bs_pos, obs.tgt_pos, unique_targets)
    out[:, 1] = bearing(bs_pos, obs.tgt_pos)[np.arange(n_bs), k]
    return out


def heuristic_policy(obs: BeliefState, bs_pos, serving, budget: PowerBudget,
                     comm_share: float = 0.5, unique_targets: bool = False) -> Action:
    """Fixed power split with beams on the weakest UE and the nearest target."""
    anchors = steering_anchors(obs, bs_pos, serving, unique_targets)
    n = len(anchors)
    return Action(p_comm=np.full(n, comm_share * budget.p_max),
                  p_sense=np.full(n, (1.0 - comm_share) * budget.p_max),
                  theta_comm=anchors[:, 0].copy(), theta_sense=anchors[:, 1].copy())
