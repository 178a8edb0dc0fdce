"""Parametric surrogate modelling with an autoencoder, a (parameter, time)
network and kernel-DMD extrapolation of latent trajectories."""

__version__ = "0.1.0"
