"""Constrained hierarchical PPO for QoS-aware 5G network slicing."""

__version__ = "0.1.0"
