"""Gradient echo memory simulation and cold-atom characterisation tools."""

from gemsim.errors import ConfigError, DomainError, NumericalInstabilityError
from gemsim.model import (
    EfficiencyReport,
    EnsembleProfile,
    GradientSchedule,
    RamanCoupling,
    TransitionLine,
    beer_lambert_od,
    delay_bandwidth_product,
    memory_bandwidth,
    raman_exponent,
    resonance_scale_factor,
    storage_efficiency,
    total_efficiency_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericalInstabilityError",
    "EfficiencyReport",
    "EnsembleProfile",
    "GradientSchedule",
    "RamanCoupling",
    "TransitionLine",
    "beer_lambert_od",
    "delay_bandwidth_product",
    "memory_bandwidth",
    "raman_exponent",
    "resonance_scale_factor",
    "storage_efficiency",
    "total_efficiency_estimate",
]
