"""Mapping unbounded policy outputs onto feasible per-BS actions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..world import Action, wrap_angle

# raw action layout per BS
P_COMM, P_SENSE, TH_COMM, TH_SENSE = range(4)
DIMS_PER_BS = 4


@dataclass(frozen=True)
class PowerBudget:
    p_max: float = 1.0  # 30 dBm

    def __post_init__(self):
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def project_raw(raw, budget: PowerBudget, n_bs: int, anchors=None,
                angle_scale: float = np.pi) -> tuple[np.ndarray, np.ndarray]:
    """Batched projection: ``raw`` of shape ``(..., 4 * n_bs)`` to powers and angles.

    Returns ``(powers, angles)``, each of shape ``(..., n_bs, 2)`` with columns
    comm/sense. See :func:`project_action` for the mapping.
    """
    raw = np.asarray(raw, dtype=float)
    raw = raw.reshape(raw.shape[:-1] + (n_bs, DIMS_PER_BS))
    with np.errstate(invalid="ignore"):
        p = budget.p_max * _sigmoid(raw[..., :2])
    p = np.nan_to_num(p, nan=0.0)
    total = p.sum(axis=-1)
    over = total > budget.p_max
    if over.any():
        q = p[over] * (budget.p_max / total[over])[:, None]
        # rounding can leave the sum a hair above the budget
        q = np.maximum(np.minimum(q, budget.p_max - q[:, ::-1]), 0.0)
        p[over] = q
    ang = angle_scale * np.tanh(np.nan_to_num(raw[..., 2:], nan=0.0))
    if anchors is not None:
        ang = ang + np.asarray(anchors, dtype=float).reshape(n_bs, 2)
    return p, wrap_angle(ang)


def project_action(raw, budget: PowerBudget, n_bs: int | None = None, anchors=None,
                   angle_scale: float = np.pi) -> Action:
    """Squash a raw vector into an action satisfying the per-BS power budget.

    ``raw`` is laid out BS-major as ``[p_comm, p_sense, theta_comm, theta_sense]``.
    Powers go through a sigmoid onto ``[0, p_max]`` and are rescaled together
    when their sum exceeds ``p_max``. Angles go through ``angle_scale * tanh``;
    when ``anchors`` (shape ``(n_bs, 2)``, comm/sense bearings) are given the
    squashed angles are offsets from them.
    """
    raw = np.ravel(np.asarray(raw, dtype=float))
    if n_bs is None:
        n_bs = raw.size // DIMS_PER_BS
    p, ang = project_raw(raw, budget, n_bs, anchors, angle_scale)
    return Action(p_comm=p[:, 0].copy(), p_sense=p[:, 1].copy(),
                  theta_comm=ang[:, 0].copy(), theta_sense=ang[:, 1].copy())


def feasible_mask(powers, angles, budget: PowerBudget, tol: float = 0.0) -> np.ndarray:
    """Per-vector feasibility for :func:`project_raw` output, shape ``(...)``."""
    ok = (powers >= 0).all(axis=-1) & (powers.sum(axis=-1) <= budget.p_max + tol)
    ok &= (np.isfinite(angles) & (angles > -np.pi) & (angles <= np.pi)).all(axis=-1)
    return ok.all(axis=-1)


def is_feasible(action: Action, budget: PowerBudget, tol: float = 0.0) -> bool:
    pc, ps = np.asarray(action.p_comm), np.asarray(action.p_sense)
    ang = np.concatenate([np.ravel(action.theta_comm), np.ravel(action.theta_sense)])
    return bool(
        np.all(pc >= 0) and np.all(ps >= 0)
        and np.all(pc + ps <= budget.p_max + tol)
        and np.all(ang > -np.pi) and np.all(ang <= np.pi)
        and np.all(np.isfinite(ang))
    )
