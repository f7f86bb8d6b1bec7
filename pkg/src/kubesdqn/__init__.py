"""Reinforcement-learning pod schedulers in a deterministic Kubernetes cluster simulator."""

__version__ = "0.1.0"
