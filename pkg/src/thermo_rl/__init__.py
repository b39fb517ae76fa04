"""Reinforcement learning of thermodynamic cycles on a model heat engine."""
