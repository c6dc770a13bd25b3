"""Concolic falsification of hybrid automata with Bayesian confidence reporting."""

__version__ = "0.1.0"
