"""Latency-robust ISAC control with a Kalman digital twin and PPO."""

__version__ = "0.1.0"
