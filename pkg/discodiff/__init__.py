"""
DisCo-Diff toy lab: discrete-latent diffusion models on 2D Gaussian mixtures
"""

__version__ = "0.1.0"
