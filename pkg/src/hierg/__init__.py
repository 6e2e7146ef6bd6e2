"""Hierarchically guided imitation and reinforcement learning on desk-scale
gridworlds: environments, synthetic experts with cost accounting, the
learning algorithms, labeling-cost bound verification, and an experiment
harness."""

__version__ = "0.1.0"
