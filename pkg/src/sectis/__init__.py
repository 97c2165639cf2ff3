"""Reputation-weighted swarm learning with validator proofs, simulated in-process."""

__version__ = "0.1.0"
