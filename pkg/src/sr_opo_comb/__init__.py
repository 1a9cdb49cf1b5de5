"""Simulation and analysis of a singly-resonant waveguide photon-pair comb."""

__version__ = "0.1.0"
