"""Physically consistent trajectory generation with Hamiltonian latent dynamics."""

__version__ = "0.1.0"
