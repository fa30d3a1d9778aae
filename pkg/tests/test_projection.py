import numpy as np
import pytest

from rgflow.basis import FULL, SMALL, CoefficientVector, LatticeView, parse_function
from rgflow.errors import ConfigurationError, NumericalError
from rgflow.projection import (
    GramSystem,
    build_target_basis,
    gram_system,
    level_moments,
    project,
    projection_residual,
    solve_gram,
    view_moments,
)
from rgflow.sampler import LevelStream


def _random_stream(n=40, L=8, seed=0):
    rng = np.random.default_rng(seed)
    return LevelStream.from_grids(np.where(rng.random((n, L, L)) < 0.6, 1, -1).astype(np.int8))


def _alpha(basis, **kw):
    v = np.zeros(len(basis))
    for name, a in kw.items():
        v[basis.names.index(name)] = a
    return CoefficientVector(basis, v)


def test_target_basis_destinations():
    tb = build_target_basis(FULL)
    assert tb.names == ["Q1", "Q3", "Q4", "Q6", "Q8", "Q10", "X4_3", "X4_4", "X4_6", "M3_4"]
    assert [f.name for f in tb.destinations] == FULL.names
    assert build_target_basis(SMALL).names == ["Q1", "Q3", "Q4", "Q6", "X4_3", "X4_4"]


def test_solve_gram_examples():
    c = solve_gram((np.diag([4.0, 1.0]), np.array([2.0, 3.0])))
    assert c == pytest.approx([0.5, 3.0], abs=1e-7)
    # singular Phi: the ridge picks the minimum-norm solution
    c = solve_gram((np.ones((2, 2)), np.ones(2)))
    assert c == pytest.approx([0.5, 0.5], abs=1e-6)
    with pytest.raises(NumericalError):
        solve_gram((np.array([[np.nan]]), np.array([1.0])))
    with pytest.raises(NumericalError):
        solve_gram((-np.eye(2), np.ones(2)))


def test_gram_is_symmetric_psd():
    mom = level_moments(_random_stream(), FULL)
    gs = gram_system(mom, _alpha(FULL, Q2=0.9))
    assert np.allclose(gs.phi, gs.phi.T)
    assert np.linalg.eigvalsh(gs.phi).min() > -1e-10
    assert np.all(gs.phi_stderr >= 0)


def test_in_span_projection_is_exact():
    """If the derivative already lies in the target span, the projection returns it."""
    alpha = _alpha(FULL, Q3=0.4, Q4=0.2, X4_3=-0.3, M2_3=0.0)
    out = project(level_moments(_random_stream(), FULL), alpha)
    expect = _alpha(FULL, Q2=0.4, Q3=0.2, X4_2=-0.3)
    assert out.values == pytest.approx(expect.values, abs=1e-6)


def test_projection_contracts():
    mom = level_moments(_random_stream(seed=3), FULL)
    alpha = CoefficientVector(FULL, np.random.default_rng(3).normal(size=10))
    c = solve_gram(gram_system(mom, alpha))
    res, norm = projection_residual(mom, alpha, c)
    assert -1e-8 <= res <= norm + 1e-8


def test_zero_coupling_maps_to_zero():
    out = project(level_moments(_random_stream(), SMALL), CoefficientVector.zeros(SMALL))
    assert np.all(out.values == 0.0)


def test_view_moments_shapes_and_union_order():
    v = LatticeView(_random_stream(n=3).grids)
    basis = [parse_function("Q2"), parse_function("Q3")]
    targets = [parse_function("Q3"), parse_function("Q4"), parse_function("X4_3")]
    m = view_moments(v, basis, targets)
    assert m.psi_psi.shape == (3, 3, 3) and m.src_psi.shape == (3, 2, 3) and m.src_src.shape == (3, 2, 2)
    # Q3 appears on both sides, so the shared entries agree
    assert np.allclose(m.src_psi[:, 1, :], m.psi_psi[:, 0, :])
    assert np.allclose(m.src_src[:, 1, 1], m.psi_psi[:, 0, 0])


def test_too_few_samples():
    mom = level_moments(_random_stream(n=1), SMALL)
    with pytest.raises(ConfigurationError):
        gram_system(mom, CoefficientVector.zeros(SMALL))


def test_gram_csv(tmp_path):
    gs = GramSystem(np.eye(2), np.array([1.0, 2.0]), np.zeros((2, 2)), np.zeros(2), 10)
    gs.to_csv(tmp_path / "g.csv", ["a", "b"])
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "entry,row,col,value,stderr"
    assert len(lines) == 1 + 4 + 2
    assert lines[-1].startswith("r,b,,2.0")
