"""Renormalization-group parameter flows for 2D Ising-type models.

The renormalized Hamiltonian after decimating half of the spins is found by
projecting conditional expectations of Hamiltonian derivatives on a
truncated, translation-invariant polynomial basis. Inner products come from
Metropolis samples of the bare model, decimated level by level; a
brute-force enumeration module provides exact reference values on tiny
lattices.
"""

__version__ = "0.1.0"

from .basis import (  # noqa: E402
    FULL,
    SMALL,
    BasisFunction,
    BasisSet,
    CoefficientVector,
    Mixed,
    Quadratic,
    Quartic,
    bare_hamiltonian,
    eval_basis,
    parse_basis,
    site_derivative,
)
from .errors import ConfigurationError, LatticeError, NumericalError, RGFlowError  # noqa: E402
from .lattice import Boundary, SpinGrid, decimate_relabel  # noqa: E402
from .sampler import ChainConfig, metropolis_run, swendsen_ensemble  # noqa: E402
from .projection import build_target_basis, renormalize_step, solve_gram  # noqa: E402
from .flow import FlowTable, run_flow, second_moment, tc_scan  # noqa: E402
from .analysis import exponent_matrices, magnetization_run, onsager_magnetization  # noqa: E402
