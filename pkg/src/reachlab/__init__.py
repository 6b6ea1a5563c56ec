"""Simulated arm reaching with learned joint-velocity policies and analytic baselines."""

__version__ = "0.1.0"
