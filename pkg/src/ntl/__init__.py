"""Noisy optimizers on river-valley toy landscapes: steady states, schedules, forces, ensembles."""

__version__ = "0.1.0"
