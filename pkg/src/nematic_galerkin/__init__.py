"""Spectral-Galerkin simulation and verification tools for the Beris-Edwards
Q-tensor model of nematic liquid crystals."""

from .tensor_core import InvalidInputError, ModelParams, PreconditionError, Viscosity
from .spectral_basis import Geometry, SpectralSpace, laplace_eigenpairs, stokes_eigenpairs
from .galerkin_sim import EnergyReport, GalerkinSystem, SimState, Trajectory

__all__ = [
    "EnergyReport",
    "GalerkinSystem",
    "Geometry",
    "InvalidInputError",
    "ModelParams",
    "PreconditionError",
    "SimState",
    "SpectralSpace",
    "Trajectory",
    "Viscosity",
    "laplace_eigenpairs",
    "stokes_eigenpairs",
]
__version__ = "0.1.0"
