"""Steady states, fluctuation spectra and entanglement witnesses for a driven
two-mode Kerr coupler, with a positive-P stochastic integrator as a check on
the linearised theory."""
from .model import CouplerParams, FrequencyGrid, ParameterError, validate
from .steady import (
    SteadyState,
    SteadyStateError,
    bistability,
    closed_form_intensity,
    general_steady_state,
    symmetric_intensities,
    symmetric_steady_state,
)
from .fluct import FluctuationModel, LinearizationError, build, spectral_matrix
from .criteria import angle_scan, duan_sum, epr_products, log_negativity, output_covariance
from .sde import SdeConfig, integrate, stationary_spectrum

__version__ = "0.1.0"

__all__ = [
    "CouplerParams", "FrequencyGrid", "ParameterError", "validate",
    "SteadyState", "SteadyStateError", "bistability", "closed_form_intensity",
    "general_steady_state", "symmetric_intensities", "symmetric_steady_state",
    "FluctuationModel", "LinearizationError", "build", "spectral_matrix",
    "angle_scan", "duan_sum", "epr_products", "log_negativity", "output_covariance",
    "SdeConfig", "integrate", "stationary_spectrum",
]
