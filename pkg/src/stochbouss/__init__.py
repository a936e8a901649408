"""Stochastic Boussinesq system with Dirichlet boundary noise on a box.

Spectral discretization of the remainder temperature, the weak Stokes and
small-data Navier-Stokes problems, the boundary-noise convolution, the
coupled fixed point on [0, tau], and Monte Carlo harnesses around them.
"""
from .boundary_noise import BoundaryBasis, BoundaryNoiseSpec, dirichlet_map
from .coupled_driver import CoupledConfig, RunReport, check_small_data, run_coupled, stopping_time
from .spectral_core import BoxDomain, ExponentPack, SpectralField, Trajectory
from .stochastic_convolution import simulate_Z, step_Z

__all__ = [
    "BoundaryBasis", "BoundaryNoiseSpec", "BoxDomain", "CoupledConfig", "ExponentPack",
    "RunReport", "SpectralField", "Trajectory", "check_small_data", "dirichlet_map",
    "run_coupled", "simulate_Z", "step_Z", "stopping_time",
]

__version__ = "0.1.0"
