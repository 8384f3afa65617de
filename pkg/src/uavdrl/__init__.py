"""Joint UAV trajectory and IoT data-collection optimisation with Q-learning agents."""

__version__ = "0.1.0"
