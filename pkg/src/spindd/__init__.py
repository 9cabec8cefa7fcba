"""Spin-resolved drift-diffusion-Poisson solver on a 1D interval.

Finite volumes with Scharfetter-Gummel fluxes, implicit Euler in time, and
diagnostics for the relative free energy and its decay.
"""
from .grid import CellField, Grid1D
from .model import BoundaryData, ScaledParams, SpinState
from .params import PhysicalParams, GAAS_50K, check_tau_condition, scale
from .stationary import SteadyState, solve_stationary
from .transport import SolverOptions, run_transient

__all__ = ["BoundaryData", "CellField", "Grid1D", "PhysicalParams", "ScaledParams",
           "SolverOptions", "SpinState", "SteadyState", "GAAS_50K", "check_tau_condition",
           "run_transient", "scale", "solve_stationary"]
__version__ = "0.1.0"
