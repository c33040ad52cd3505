"""Taylor jets (input derivatives) nested inside a reverse tape (parameter gradients)."""
from .jet import (
    ACTIVATIONS,
    MAX_ORDER,
    ConfigurationError,
    Jet,
    JetError,
    activation_derivatives,
    faa_di_bruno,
    fd_check,
    jet_activate,
    jet_combine,
    jet_lift,
)
from .tape import (
    Tape,
    TapeError,
    Var,
    concat_last,
    jet_activation,
    jet_affine,
    mean_square,
    tape_backward,
    take,
)

__all__ = [
    "ACTIVATIONS", "MAX_ORDER", "ConfigurationError", "Jet", "JetError", "Tape", "TapeError",
    "Var", "activation_derivatives", "concat_last", "faa_di_bruno", "fd_check", "jet_activate",
    "jet_activation", "jet_affine", "jet_combine", "jet_lift", "mean_square", "tape_backward", "take",
]
