"""Reference solutions: ETDRK4 spectral solver, cavity solver, grid files."""
from .cavity import OracleConvergenceError, cavity_solve, discrete_divergence, richardson_extrapolate
from .grid import FieldGrid, GridFormatError, load_field, save_field
from .spectral import (SpectralDivergedError, SpectralState, dft, etdrk4_solve, idft, integrate, ladder_gate,
                       self_convergence)

__all__ = [
    "FieldGrid", "GridFormatError", "OracleConvergenceError", "SpectralDivergedError", "SpectralState",
    "cavity_solve", "dft", "discrete_divergence", "etdrk4_solve", "idft", "integrate", "ladder_gate",
    "load_field", "richardson_extrapolate", "save_field", "self_convergence",
]
