"""Trajectory diffusion for protein backbone frames and side-chain torsions."""

__version__ = "0.1.0"
