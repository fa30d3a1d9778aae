"""Exception types shared by the package.

The CLI maps them to exit codes: validation problems exit with 3, numerical
failures with 4.
"""


class RGFlowError(Exception):
    """Base class."""


class ConfigurationError(RGFlowError, ValueError):
    """Invalid parameters, detected before any sampling starts."""


class LatticeError(ConfigurationError):
    """Lattice size or boundary condition incompatible with the operation."""


class NumericalError(RGFlowError, ArithmeticError):
    """Non-finite energies, failed solves, coefficient blow-up."""
