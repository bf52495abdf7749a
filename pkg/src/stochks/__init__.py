"""Pseudospectral simulation of the stochastic Kuramoto-Sivashinsky equation

    du + (nu A^2 u - A u + B(u, u)) dt = G dw

on a periodic interval, with A = -d^2/dx^2 and B(u, v) = u v_x.
"""
__version__ = "0.1.0"

from .dynamics import BlowUpError, SimConfig, TangentState, simulate
from .noise import NoiseOperator, NoiseStream
from .spectral import DomainSpec, SpectralField

__all__ = [
    "__version__",
    "BlowUpError",
    "DomainSpec",
    "NoiseOperator",
    "NoiseStream",
    "SimConfig",
    "SpectralField",
    "TangentState",
    "simulate",
]
