"""Simulated dolly-in shots: moment-based shot metrics, a TD3 trainer, a PD baseline and evaluation tools."""

__version__ = "0.1.0"
