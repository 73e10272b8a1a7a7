from .actions import PowerBudget, feasible_mask, is_feasible, project_action, project_raw
from .features import FeatureScales, feature_dim, featurize
from .heuristic import heuristic_policy, steering_anchors
from .ppo import (
    Batch,
    PolicyParams,
    PPOConfig,
    act,
    compute_gae,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
    value,
)
from .reward import RewardWeights, reward

__all__ = [
    "PowerBudget", "feasible_mask", "is_feasible", "project_action", "project_raw", "FeatureScales", "feature_dim", "featurize",
    "heuristic_policy", "steering_anchors", "Batch", "PolicyParams", "PPOConfig", "act",
    "compute_gae", "load_checkpoint", "ppo_update", "save_checkpoint", "value",
    "RewardWeights", "reward",
]
