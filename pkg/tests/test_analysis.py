import math
import warnings

import numpy as np
import pytest

from rgflow.analysis import (
    TC_EXACT,
    block_spins,
    chain_rule_matrix,
    exponent_from_values,
    exponent_run,
    magnetization_curve,
    magnetization_run,
    onsager_magnetization,
)
from rgflow.basis import FULL, SMALL, bare_hamiltonian
from rgflow.errors import ConfigurationError, LatticeError
from rgflow.lattice import Boundary
from rgflow.sampler import ChainConfig


def test_onsager_values():
    assert TC_EXACT == pytest.approx(2.269185, abs=1e-6)
    assert onsager_magnetization(2.0) == pytest.approx(0.9113, abs=1e-4)
    assert onsager_magnetization(2.5) == 0.0
    assert onsager_magnetization(1.0) == pytest.approx(0.99928, abs=1e-5)
    with pytest.raises(ConfigurationError):
        onsager_magnetization(0.0)


def test_identical_levels_give_identity():
    x = np.random.default_rng(0).normal(size=(500, 4))
    assert chain_rule_matrix(x, x) == pytest.approx(np.eye(4), abs=1e-6)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        res = exponent_from_values(x, x, list("abcd"), n_boot=5)
    assert res.nu is None and res.notes


def test_linear_gaussian_recovers_mixing_matrix():
    rng = np.random.default_rng(1)
    B = np.array([[2.0, 0.3, 0.0], [0.0, 0.5, 0.1], [0.0, 0.0, 0.25]])
    c = rng.normal(size=(20000, 3))
    a = c @ B.T + 0.1 * rng.normal(size=c.shape)
    # cov(c, a) = C B^T, so the solve returns B^T (same spectrum as B)
    A = chain_rule_matrix(a, c)
    assert A == pytest.approx(B.T, abs=0.02)
    res = exponent_from_values(a, c, ["x", "y", "z"], n_boot=50)
    assert res.lambda_T == pytest.approx(2.0, abs=0.02)
    assert res.nu == pytest.approx(0.5, abs=0.01)
    assert res.nu_stderr < 0.01
    d = res.to_dict()
    assert d["names"] == ["x", "y", "z"] and len(d["eigenvalues_real"]) == 3


def test_constant_columns_are_dropped():
    rng = np.random.default_rng(2)
    c = rng.normal(size=(300, 2))
    a = np.column_stack([np.ones(300), 1.5 * c[:, 0]])
    c = np.column_stack([np.ones(300), c[:, 0]])
    res = exponent_from_values(a, c, ["Q1", "Q2"], n_boot=10)
    assert res.names == ["Q2"] and res.lambda_T == pytest.approx(1.5, abs=1e-6)


def test_misaligned_values():
    with pytest.raises(LatticeError):
        exponent_from_values(np.zeros((10, 2)), np.zeros((9, 2)), ["a", "b"])


def test_exponent_run_levels():
    cfg = ChainConfig(seed=1, burn_in_sweeps=10, measure_sweeps=20)
    with pytest.raises(ConfigurationError):
        exponent_run(2.27, 16, (1, 3), SMALL, cfg)


def test_block_spins():
    x = np.arange(16).reshape(1, 4, 4)
    assert np.array_equal(block_spins(x, "pick-one")[0], [[0, 2], [8, 10]])
    s = np.ones((1, 4, 4), dtype=np.int8)
    s[0, :2, :2] = [[-1, -1], [-1, 1]]
    out = block_spins(s, "majority", np.random.default_rng(0))
    assert out[0, 0, 0] == -1 and out[0, 1, 1] == 1
    with pytest.raises(ConfigurationError):
        block_spins(s, "majority")
    with pytest.raises(ConfigurationError):
        block_spins(s, "median", np.random.default_rng(0))
    with pytest.raises(LatticeError):
        block_spins(np.ones((1, 3, 3)), "pick-one")


def test_magnetization_needs_fixed_boundary():
    cfg = ChainConfig(seed=1, burn_in_sweeps=10, measure_sweeps=20)
    with pytest.raises(ConfigurationError):
        magnetization_run(bare_hamiltonian(2.0, FULL), 8, cfg, boundary=Boundary.PERIODIC)


def test_low_temperature_magnetization(tmp_path):
    cfg = ChainConfig(seed=4, burn_in_sweeps=100, measure_sweeps=300)
    curve = magnetization_curve([(1.0, bare_hamiltonian(1.0, FULL))], 20, cfg)
    assert curve.points[0].m >= 0.99
    curve.to_csv(tmp_path / "m.csv")
    head, row = (tmp_path / "m.csv").read_text().splitlines()
    assert head == "T,m,stderr,onsager,L,source"
    assert row.startswith("1.0,") and row.endswith(",20,bare")
