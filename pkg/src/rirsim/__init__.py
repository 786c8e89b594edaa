"""Recoil-induced resonance simulator: cold-atom momentum ladder coupled to a probe field."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DomainError, NotFoundError, NumericalBlowupError,
                     ResourceError, RirError)
from .params import DriveSchedule, PhysicalParams, Segment, default_params, khz, mhz_per_ms
from .grid import FieldMode, MomentumGrid, build_grid, thermal_distribution
from .dynamics import GainTrace, PopulationMode, Scheme, SolverOptions, simulate

__all__ = [
    "ConfigurationError", "DomainError", "NotFoundError", "NumericalBlowupError",
    "ResourceError", "RirError", "DriveSchedule", "PhysicalParams", "Segment",
    "default_params", "khz", "mhz_per_ms", "FieldMode", "MomentumGrid", "build_grid",
    "thermal_distribution", "GainTrace", "PopulationMode", "Scheme", "SolverOptions", "simulate",
]
