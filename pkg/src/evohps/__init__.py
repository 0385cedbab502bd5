"""Hyperparameter search for small reinforcement-learning agents.

Variable-length genes (one layout per RL algorithm) are evolved with a
genetic algorithm, benchmarked against a Gaussian-process Bayesian-
optimization baseline, and scored by training desk-scale DQN/DDPG/A2C agents
on built-in environments through a parallel parameter-server orchestrator.
"""

__version__ = "0.1.0"
