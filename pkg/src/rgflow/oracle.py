"""Exact enumeration on tiny systems.

Everything the Monte-Carlo code estimates has an exact counterpart here:
partition sums, marginal Hamiltonians of the kept spins, conditional
expectations of Hamiltonian derivatives, exact inner products, and
weighted least-squares fits of the marginal onto the basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .basis import BasisSet, CoefficientVector, LatticeView, Quadratic
from .errors import ConfigurationError
from .lattice import parity_mask
from .projection import Moments, TargetBasis, build_target_basis, project, solve_gram, view_moments

__all__ = [
    "MAX_SPINS",
    "EnumerationTable",
    "MarginalTable",
    "FitResult",
    "enumerate_lattice",
    "enumerate_chain",
    "exact_marginal",
    "chain_marginal",
    "exact_condexp_derivative",
    "fit_coefficients",
    "marginal_fit",
    "exact_moments",
    "exact_renormalize",
    "fixtures",
]

MAX_SPINS = 20


def all_states(n: int) -> np.ndarray:
    """All ``2**n`` spin vectors, row ``s`` has bit ``n-1-i`` of ``s`` at position ``i``."""
    if n > MAX_SPINS:
        raise ConfigurationError(f"2**{n} states exceed the enumeration limit 2**{MAX_SPINS}")
    idx = np.arange(1 << n, dtype=np.int64)[:, None]
    bits = (idx >> np.arange(n - 1, -1, -1)) & 1
    return (1 - 2 * bits).astype(np.int8)


def _fsum(a: np.ndarray) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel())


@dataclass
class EnumerationTable:
    states: np.ndarray  # (N, L, L) or (N, n)
    log_weights: np.ndarray  # K(x)

    @property
    def log_z(self) -> float:
        return float(logsumexp(self.log_weights))

    @property
    def Z(self) -> float:
        shift = self.log_weights.max()
        return math.exp(shift) * _fsum(np.exp(self.log_weights - shift))

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_z)

    def expect(self, g: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> float:
        vals = g(self.states) if callable(g) else np.asarray(g)
        return _fsum(self.probabilities * vals)


def enumerate_lattice(alpha: CoefficientVector, L: int) -> EnumerationTable:
    """All ``2**(L*L)`` periodic configurations with weights ``exp(K)``."""
    states = all_states(L * L).reshape(-1, L, L)
    K = np.zeros(len(states))
    for start in range(0, len(states), 8192):
        K[start : start + 8192] = LatticeView(states[start : start + 8192]).energy(alpha)
    return EnumerationTable(states, K)


def enumerate_chain(coupling: float, n: int) -> EnumerationTable:
    """Open chain with ``K = coupling * sum_i x_i x_{i+1}``."""
    states = all_states(n)
    K = coupling * (states[:, :-1].astype(float) * states[:, 1:]).sum(axis=1)
    return EnumerationTable(states, K)


@dataclass
class MarginalTable:
    """``K_hat(x_hat) = log sum_{x_tilde} exp(K)`` over every kept-spin state.

    The additive constant is the natural one, so ``sum exp(K_hat) = Z``.
    """

    kept: np.ndarray  # boolean mask over spin positions
    states: np.ndarray  # (N_hat, n_kept) kept-spin states
    k_hat: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.k_hat - logsumexp(self.k_hat))

    def coupling(self) -> np.ndarray:
        return self.k_hat


def _marginalize(table: EnumerationTable, kept: np.ndarray) -> MarginalTable:
    flat = table.states.reshape(len(table.states), -1)
    kept_flat = kept.reshape(-1)
    n_hat = int(kept_flat.sum())
    hat = flat[:, kept_flat]
    bits = (hat < 0).astype(np.int64)
    code = bits @ (1 << np.arange(n_hat - 1, -1, -1))
    order = np.argsort(code, kind="stable")
    n_tilde = flat.shape[1] - n_hat
    K = table.log_weights[order].reshape(1 << n_hat, 1 << n_tilde)
    k_hat = logsumexp(K, axis=1)
    return MarginalTable(kept, all_states(n_hat), k_hat)


def exact_marginal(alpha: CoefficientVector, L: int) -> MarginalTable:
    """Marginal of the even sublattice of an ``L x L`` periodic lattice."""
    return _marginalize(enumerate_lattice(alpha, L), parity_mask(L))


def chain_marginal(coupling: float, n: int, keep: Sequence[int]) -> MarginalTable:
    kept = np.zeros(n, dtype=bool)
    kept[list(keep)] = True
    return _marginalize(enumerate_chain(coupling, n), kept)


def exact_condexp_derivative(alpha: CoefficientVector, L: int, site) -> np.ndarray:
    """``E[dK/dx_I | x_hat]`` for every even-sublattice state (same order as the marginal)."""
    i, j = site
    if (i + j) % 2:
        raise ConfigurationError("conditioning site must have even parity")
    table = enumerate_lattice(alpha, L)
    view = LatticeView(table.states)
    f = sum(a * view.derivative(fn)[:, i, j] for fn, a in alpha.items())
    f = np.broadcast_to(np.asarray(f, dtype=float), (len(table.states),))
    kept = parity_mask(L)
    num = _marginalize(EnumerationTable(table.states, table.log_weights), kept)
    # weighted average within each x_hat block
    flat = table.states.reshape(len(table.states), -1)[:, kept.reshape(-1)]
    code = (flat < 0).astype(np.int64) @ (1 << np.arange(flat.shape[1] - 1, -1, -1))
    order = np.argsort(code, kind="stable")
    K = table.log_weights[order].reshape(len(num.k_hat), -1)
    w = np.exp(K - num.k_hat[:, None])
    return (w * f[order].reshape(w.shape)).sum(axis=1)


@dataclass
class FitResult:
    coefficients: np.ndarray
    constant: float
    residual_norm: float  # weighted RMS misfit of K_hat


def fit_coefficients(marginal: MarginalTable, design: np.ndarray, weighted: bool = True) -> FitResult:
    """Least-squares fit ``K_hat ~ constant + design @ c``.

    Rows are weighted by the exact marginal probabilities. Degenerate designs
    get the minimum-norm solution.
    """
    D = np.asarray(design, dtype=float)
    if D.ndim != 2 or D.shape[0] != len(marginal.k_hat):
        raise ConfigurationError("design must have one row per kept-spin state")
    w = marginal.probabilities if weighted else np.full(len(marginal.k_hat), 1.0 / len(marginal.k_hat))
    sw = np.sqrt(w)
    # centred columns: the constant never competes with degenerate directions
    d_mean = w @ D
    k_mean = float(w @ marginal.k_hat)
    A = (D - d_mean) * sw[:, None]
    y = (marginal.k_hat - k_mean) * sw
    c, *_ = np.linalg.lstsq(A, y, rcond=1e-12)
    res = y - A @ c
    return FitResult(c, k_mean - float(d_mean @ c), float(np.sqrt(res @ res)))


def _even_grids(marginal: MarginalTable, L: int) -> np.ndarray:
    grids = np.ones((len(marginal.states), L, L), dtype=np.int8)
    grids[:, marginal.kept] = marginal.states
    return grids


def marginal_fit(alpha: CoefficientVector, L: int, target: TargetBasis | None = None):
    """Fit the exact even-sublattice marginal onto the relabelled basis.

    Returns ``(CoefficientVector, FitResult)``. Columns that are constant on
    the kept states cannot be told apart from the constant term; they get
    zero, except ``Q1`` whose slot receives ``constant / n_kept``.
    """
    basis = alpha.basis
    target = target or build_target_basis(basis)
    marg = exact_marginal(alpha, L)
    grids = _even_grids(marg, L)
    view = LatticeView(grids, sites=parity_mask(L))
    design = view.evaluate_many(target.functions)
    w = marg.probabilities
    mean = w @ design
    varying = np.sqrt(w @ (design - mean) ** 2) > 1e-12 * (1 + np.abs(mean))
    fit = fit_coefficients(marg, design[:, varying])
    values = np.zeros(len(basis))
    cols = np.flatnonzero(varying)
    for c, t in zip(fit.coefficients, cols):
        values[basis.index(target.destinations[t])] = c
    if Quadratic(1) in basis.functions:
        values[basis.index(Quadratic(1))] = fit.constant / int(marg.kept.sum())
    full = np.zeros(len(target))
    full[cols] = fit.coefficients
    return CoefficientVector(basis, values), FitResult(full, fit.constant, fit.residual_norm)


def exact_moments(measure: CoefficientVector, L: int, basis: BasisSet | None = None, target=None) -> Moments:
    """Exact derivative moments on an ``L x L`` lattice under ``exp(K_measure)``."""
    basis = basis or measure.basis
    target = target or build_target_basis(basis)
    table = enumerate_lattice(measure, L)
    parts = []
    for start in range(0, len(table.states), 4096):
        parts.append(view_moments(LatticeView(table.states[start : start + 4096]), list(basis), target.functions))
    mom = Moments.concat(parts)
    mom.weights = table.probabilities
    return mom


def exact_renormalize(alpha: CoefficientVector, L: int) -> CoefficientVector:
    """Renormalization step with exact inner products."""
    target = build_target_basis(alpha.basis)
    return project(exact_moments(alpha, L, alpha.basis, target), alpha, target)


def chain_decimation_coupling(K: float) -> float:
    """Closed form for the end-to-end coupling after summing one middle spin."""
    return math.atanh(math.tanh(K) ** 2)


def fixtures(L: int, T: float, basis: BasisSet) -> dict:
    """Golden values used by the Monte-Carlo tests."""
    from .basis import bare_hamiltonian

    alpha = bare_hamiltonian(T, basis)
    table = enumerate_lattice(alpha, L)
    view_vals = np.concatenate(
        [LatticeView(table.states[s : s + 8192]).evaluate_many(basis) for s in range(0, len(table.states), 8192)]
    )
    p = table.probabilities
    proj = exact_renormalize(alpha, L)
    fit_alpha, fit = marginal_fit(alpha, L)
    chain = chain_marginal(0.5, 3, [0, 2])
    chain_fit = fit_coefficients(chain, (chain.states[:, 0] * chain.states[:, 1]).astype(float)[:, None])
    return {
        "L": L,
        "T": T,
        "basis": basis.names,
        "log_Z": table.log_z,
        "expectations": {f.name: _fsum(p * view_vals[:, i]) for i, f in enumerate(basis)},
        "magnetization_abs": _fsum(p * np.abs(table.states.mean(axis=(1, 2)))),
        "projection_alpha2": dict(zip(basis.names, proj.values.tolist())),
        "marginal_fit_alpha2": dict(zip(basis.names, fit_alpha.values.tolist())),
        "marginal_fit_residual": fit.residual_norm,
        "chain3_coupling": float(chain_fit.coefficients[0]),
        "chain3_closed_form": chain_decimation_coupling(0.5),
    }
