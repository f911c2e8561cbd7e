"""Pseudospectral simulator and spectral-theory toolkit for the magnetic
Klein-Gordon equation psi_tt = (grad - iA)^2 psi - m^2 psi - V psi."""
from magkg.grid import (SpectralGrid, StateVector, WeightedNormSpec, energy_norm,
                        make_grid, weighted_norm)
from magkg.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["SpectralGrid", "StateVector", "WeightedNormSpec", "energy_norm",
           "make_grid", "weighted_norm", "BACKEND"]
