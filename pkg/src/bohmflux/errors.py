"""Exception hierarchy.

Configuration problems and numerical aborts are kept apart because the CLI maps
them to different exit codes.
"""


class BohmfluxError(Exception):
    pass


class ConfigurationError(BohmfluxError, ValueError):
    """Invalid grid, state, Hamiltonian, plan or experiment configuration."""


class OutOfDomainError(BohmfluxError, ValueError):
    pass


class DegenerateSliceError(BohmfluxError, ValueError):
    """The conditional slice carries (numerically) no weight."""


class NumericalAbort(BohmfluxError, RuntimeError):
    """A run had to be stopped because a numerical guard tripped."""


class NormDriftError(NumericalAbort):
    pass


class BoundaryError(NumericalAbort):
    """Density reached the periodic boundary."""


class ExclusionQuotaError(NumericalAbort):
    """Too many trajectories left the domain margin."""
