"""Generalized lambda models for emulating stochastic simulators and
estimating classical and QoI-based Sobol' indices."""

__version__ = "0.1.0"
