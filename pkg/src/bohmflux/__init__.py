"""Single-shot energy flow in open quantum systems from Bohmian trajectories."""
from .errors import (BohmfluxError, ConfigurationError, DegenerateSliceError,
                     ExclusionQuotaError, NormDriftError, NumericalAbort, OutOfDomainError)
from .grid import Grid, JointWaveFunction, density, make_gaussian_product
from .hamiltonian import HamiltonianSpec, expand_preset
from .propagator import PropagationPlan, evolve

__version__ = "0.1.0"

__all__ = [
    "BohmfluxError", "ConfigurationError", "DegenerateSliceError", "ExclusionQuotaError",
    "NormDriftError", "NumericalAbort", "OutOfDomainError", "Grid", "JointWaveFunction",
    "density", "make_gaussian_product", "HamiltonianSpec", "expand_preset",
    "PropagationPlan", "evolve", "__version__",
]
