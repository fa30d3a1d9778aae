import math

import numpy as np
import pytest

from rgflow.basis import SMALL, CoefficientVector, LatticeView, bare_hamiltonian
from rgflow.errors import ConfigurationError
from rgflow.lattice import parity_mask
from rgflow.oracle import (
    all_states,
    chain_decimation_coupling,
    chain_marginal,
    enumerate_chain,
    enumerate_lattice,
    exact_condexp_derivative,
    exact_marginal,
    exact_renormalize,
    fit_coefficients,
    fixtures,
    marginal_fit,
)


def test_all_states():
    s = all_states(3)
    assert s.shape == (8, 3)
    assert len({tuple(r) for r in s}) == 8
    with pytest.raises(ConfigurationError):
        all_states(40)


def test_partition_function_free_spins():
    assert enumerate_lattice(CoefficientVector.zeros(SMALL), 2).Z == 16.0


def test_two_spin_correlation():
    for K in (0.1, 0.5, 1.3):
        t = enumerate_chain(K, 2)
        assert t.expect(lambda s: s[:, 0] * s[:, 1]) == pytest.approx(math.tanh(K), abs=1e-14)


def test_three_spin_chain_decimation():
    m = chain_marginal(0.5, 3, [0, 2])
    fit = fit_coefficients(m, (m.states[:, 0] * m.states[:, 1]).astype(float)[:, None])
    assert fit.coefficients[0] == pytest.approx(0.2168, abs=1e-4)  # printed value is truncated
    assert fit.coefficients[0] == pytest.approx(chain_decimation_coupling(0.5), abs=1e-10)
    assert fit.residual_norm < 1e-12


def test_zero_coupling_marginal_is_constant():
    m = exact_marginal(CoefficientVector.zeros(SMALL), 4)
    assert np.ptp(m.k_hat) == 0.0
    assert m.k_hat[0] == pytest.approx(8 * math.log(2))


def test_marginal_sums_to_z():
    alpha = bare_hamiltonian(2.27, SMALL)
    m = exact_marginal(alpha, 4)
    assert math.fsum(np.exp(m.k_hat)) == pytest.approx(enumerate_lattice(alpha, 4).Z, rel=1e-12)


def test_conditional_expectation_is_orthogonal_projection():
    """The residual f - E[f | x_hat] is orthogonal to every function of x_hat."""
    alpha = bare_hamiltonian(2.27, SMALL)
    L, site = 4, (0, 0)
    table = enumerate_lattice(alpha, L)
    view = LatticeView(table.states)
    f = sum(a * view.derivative(fn)[:, 0, 0] for fn, a in alpha.items())
    g = exact_condexp_derivative(alpha, L, site)
    kept = parity_mask(L).reshape(-1)
    hat = table.states.reshape(len(table.states), -1)[:, kept]
    code = (hat < 0).astype(np.int64) @ (1 << np.arange(hat.shape[1] - 1, -1, -1))
    resid = f - g[code]
    rng = np.random.default_rng(0)
    p = table.probabilities
    for _ in range(5):
        h = rng.normal(size=len(g))[code]
        assert abs(p @ (resid * h)) < 1e-12
    with pytest.raises(ConfigurationError):
        exact_condexp_derivative(alpha, L, (0, 1))


def test_conditional_expectation_in_span():
    """With only even-shell couplings the derivative at an even site is already x_hat-measurable."""
    alpha = CoefficientVector(SMALL, [0, 0, 0.3, -0.2, 0, 0.5])
    g = exact_condexp_derivative(alpha, 4, (2, 2))
    m = exact_marginal(alpha, 4)
    grids = np.ones((len(m.states), 4, 4), dtype=np.int8)
    grids[:, parity_mask(4)] = m.states
    view = LatticeView(grids)
    direct = sum(a * view.derivative(fn)[:, 2, 2] for fn, a in alpha.items())
    assert g == pytest.approx(direct, abs=1e-12)


def test_complete_case_projection_matches_marginal_fit():
    alpha = CoefficientVector(SMALL, [0, 0, 0.3, -0.2, 0, 0.5])
    proj = exact_renormalize(alpha, 4)
    fit, res = marginal_fit(alpha, 4)
    assert res.residual_norm < 1e-9
    assert np.max(np.abs(proj.values[1:] - fit.values[1:])) < 1e-6


def test_fixtures_deterministic():
    a = fixtures(4, 2.27, SMALL)
    b = fixtures(4, 2.27, SMALL)
    assert a == b
    assert a["chain3_coupling"] == pytest.approx(a["chain3_closed_form"], abs=1e-12)
    assert a["expectations"]["Q1"] == 16.0
