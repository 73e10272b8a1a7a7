"""Flattening a belief (or raw delayed observation) into a policy input vector.

Layout, in order:

* per UE ``j``: position relative to its serving BS (x, y), velocity (x, y),
  log10 SINR proxy;
* per target ``k``: position relative to the nearest BS (x, y), velocity
  (x, y), log10(1 + covariance trace);
* effective observation lag.

Every entry is z-scored with the fixed constants in :class:`FeatureScales`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..twin import BeliefState
from ..world import distance

UE_BLOCK = 5
TGT_BLOCK = 5


@dataclass(frozen=True)
class FeatureScales:
    pos: float = 50.0
    vel: float = 10.0
    csi_center: float = 4.0
    csi_scale: float = 2.0
    trace_center: float = 0.5
    trace_scale: float = 1.0
    lag: float = 0.05


def feature_dim(n_ue: int, n_tgt: int) -> int:
    return UE_BLOCK * n_ue + TGT_BLOCK * n_tgt + 1


def featurize(obs: BeliefState, bs_pos, serving, scales: FeatureScales = FeatureScales()) -> np.ndarray:
    bs_pos = np.asarray(bs_pos, dtype=float)
    ue_rel = obs.ue_pos - bs_pos[np.asarray(serving)]
    csi = np.log10(np.maximum(obs.csi_proxy, 1e-12))
    ue = np.column_stack([
        ue_rel / scales.pos,
        obs.ue_vel / scales.vel,
        (csi - scales.csi_center) / scales.csi_scale,
    ])
    nearest = np.argmin(distance(bs_pos, obs.tgt_pos), axis=0)
    tgt_rel = obs.tgt_pos - bs_pos[nearest]
    tr = np.log10(1.0 + obs.tgt_cov_trace)
    tgt = np.column_stack([
        tgt_rel / scales.pos,
        obs.tgt_vel / scales.vel,
        (tr - scales.trace_center) / scales.trace_scale,
    ])
    return np.concatenate([ue.ravel(), tgt.ravel(), [obs.effective_lag / scales.lag]])
