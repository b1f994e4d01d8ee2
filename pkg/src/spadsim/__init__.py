"""Monte Carlo simulator and characterization toolkit for a 1.25 GHz sine-gated SPAD."""

__version__ = "0.1.0"
