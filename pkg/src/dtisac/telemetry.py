"""Delayed telemetry channel and the controller-side measurement buffer.

All timestamps live on the simulation step grid. Packets carry integer step
indices and expose times in seconds through ``dt``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .world import SensingEstimates, WorldState


@dataclass(frozen=True)
class DelayModel:
    mean_ms: float = 50.0
    std_ms: float = 15.0
    step_ms: float = 10.0

    def __post_init__(self):
        if self.std_ms < 0:
            raise ValueError("std_ms must be >= 0")
        if self.step_ms <= 0:
            raise ValueError("step_ms must be positive")


@dataclass(frozen=True)
class TelemetryNoise:
    ue_pos_sigma: float = 1.0
    # False reports targets at their true positions with zero sigma (noiseless telemetry)
    target_passthrough: bool = True

    def __post_init__(self):
        if self.ue_pos_sigma < 0:
            raise ValueError("ue_pos_sigma must be >= 0")


@dataclass(frozen=True)
class TelemetryPacket:
    gen_step: int
    arrival_step: int
    dt: float
    ue_pos: np.ndarray
    ue_sigma: np.ndarray
    tgt_pos: np.ndarray
    tgt_sigma: np.ndarray
    # velocity reports, present only in acquisition packets
    ue_vel: np.ndarray | None = None
    tgt_vel: np.ndarray | None = None
    vel_sigma: float = 0.0

    @property
    def gen_time(self) -> float:
        return self.gen_step * self.dt

    @property
    def arrival_time(self) -> float:
        return self.arrival_step * self.dt

    @property
    def delay_steps(self) -> int:
        return self.arrival_step - self.gen_step


def sample_delay(model: DelayModel, rng: np.random.Generator) -> int:
    """Truncated Gaussian delay, quantized to whole simulation steps."""
    # one draw per call even when std is 0 keeps random streams aligned across latencies
    d = model.mean_ms + model.std_ms * rng.standard_normal()
    return quantize_delay(d, model.step_ms)


def quantize_delay(delay_ms: float, step_ms: float) -> int:
    return int(round(max(delay_ms, 0.0) / step_ms))


def step_index(t: float, dt: float) -> int:
    return int(round(t / dt))


def emit(state: WorldState, sensing: SensingEstimates, noise: TelemetryNoise,
         model: DelayModel, rng: np.random.Generator, dt: float) -> TelemetryPacket:
    gen = step_index(state.t, dt)
    z = rng.standard_normal(state.ue_pos.shape)
    ue_pos = state.ue_pos + noise.ue_pos_sigma * z
    delay = sample_delay(model, rng)
    if noise.target_passthrough:
        tgt_pos = np.array(sensing.est_pos, dtype=float, copy=True)
        tgt_sigma = np.array(sensing.est_sigma, dtype=float, copy=True)
    else:
        tgt_pos = state.tgt_pos.copy()
        tgt_sigma = np.zeros(len(tgt_pos))
    return TelemetryPacket(
        gen_step=gen,
        arrival_step=gen + delay,
        dt=dt,
        ue_pos=ue_pos,
        ue_sigma=np.full(len(ue_pos), noise.ue_pos_sigma),
        tgt_pos=tgt_pos,
        tgt_sigma=tgt_sigma,
    )


def emit_acquisition(state: WorldState, sensing: SensingEstimates, noise: TelemetryNoise,
                     rng: np.random.Generator, dt: float, vel_sigma: float) -> TelemetryPacket:
    """Zero-delay reset-time packet that also reports velocities with noise ``vel_sigma``."""
    if vel_sigma < 0:
        raise ValueError("vel_sigma must be >= 0")
    pkt = emit(state, sensing, noise, DelayModel(0.0, 0.0, dt * 1000.0), rng, dt)
    ue_vel = state.ue_vel + vel_sigma * rng.standard_normal(state.ue_vel.shape)
    tgt_vel = state.tgt_vel + vel_sigma * rng.standard_normal(state.tgt_vel.shape)
    return replace(pkt, ue_vel=ue_vel, tgt_vel=tgt_vel, vel_sigma=float(vel_sigma))


class TelemetryBuffer:
    """Bounded store of packets keyed by generation step."""

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._packets: dict[int, TelemetryPacket] = {}

    def __len__(self):
        return len(self._packets)

    def __iter__(self):
        return iter(self._packets[k] for k in sorted(self._packets))

    def push(self, pkt: TelemetryPacket) -> "TelemetryBuffer":
        self._packets[pkt.gen_step] = pkt
        while len(self._packets) > self.capacity:
            del self._packets[min(self._packets)]
        return self

    def newest_available(self, now_step: int) -> TelemetryPacket | None:
        best = None
        for gen, pkt in self._packets.items():
            if pkt.arrival_step <= now_step and (best is None or gen > best.gen_step):
                best = pkt
        return best

    def clear(self):
        self._packets.clear()
