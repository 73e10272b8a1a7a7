from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..world import Action, GroundTruthMetrics
from .actions import PowerBudget


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 1.0
    w2: float = 0.5
    w3: float = 0.2
    rate_norm: float = 6 * 20e6 * np.log2(11.0)
    mse_eps: float = 0.1

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "rate_norm", "mse_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def power_ratio(action: Action, budget: PowerBudget) -> float:
    n_bs = len(np.atleast_1d(action.p_comm))
    return action.total_power / (n_bs * budget.p_max)


def reward(metrics: GroundTruthMetrics, action: Action, weights: RewardWeights,
           budget: PowerBudget) -> float:
    """Throughput bonus plus inverse-MSE bonus minus normalized power spend."""
    return reward_terms(metrics.sum_rate, metrics.mse, power_ratio(action, budget), weights)


def reward_terms(sum_rate: float, mse: float, p_ratio: float, weights: RewardWeights) -> float:
    return (weights.w1 * sum_rate / weights.rate_norm
            + weights.w2 / (mse + weights.mse_eps)
            - weights.w3 * p_ratio)
