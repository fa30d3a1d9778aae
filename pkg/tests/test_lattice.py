import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgflow.errors import ConfigurationError, LatticeError
from rgflow.lattice import (
    Boundary,
    Parity,
    SpinGrid,
    block_majority,
    decimate_relabel,
    extract_level,
    level_geometry,
    parity,
    parity_mask,
    relabel_offset,
    shell_sites,
)
from rgflow.shells import SHELLS, get_shell, shell_for_d2


def test_parity_examples():
    assert parity((0, 0)) is Parity.EVEN
    assert parity((1, 2)) is Parity.ODD
    assert parity((3, 3)) is Parity.EVEN


@pytest.mark.parametrize("L", [2, 4, 6, 10])
def test_parity_partition_sizes(L):
    even = parity_mask(L)
    assert even.sum() == L * L // 2
    assert parity_mask(L, Parity.ODD).sum() == L * L // 2


def test_shell_table():
    expect = {1: (0, 1), 2: (1, 4), 3: (2, 4), 4: (4, 4), 5: (5, 8), 6: (8, 4), 7: (9, 4), 8: (10, 8), 9: (13, 8), 10: (16, 4)}
    for k, (d2, n) in expect.items():
        sh = SHELLS[k]
        assert (sh.d2, sh.n) == (d2, n)
        assert all(di * di + dj * dj == d2 for di, dj in sh.offsets)
        assert {(di + dj) % 2 for di, dj in sh.offsets} == {d2 % 2}
    with pytest.raises(ConfigurationError):
        get_shell(11)


def test_shell_sites_examples():
    g4 = SpinGrid.uniform(4)
    assert set(shell_sites(g4, (0, 0), 2)) == {(1, 0), (3, 0), (0, 1), (0, 3)}
    assert set(shell_sites(SpinGrid.uniform(8), (2, 2), 3)) == {(1, 1), (1, 3), (3, 1), (3, 3)}
    assert shell_sites(g4, (1, 2), 1) == [(1, 2)]
    with pytest.raises(ConfigurationError):
        shell_sites(g4, (0, 0), 0)


def test_grid_validation():
    with pytest.raises(LatticeError):
        SpinGrid(np.zeros((4, 4), dtype=np.int8))
    with pytest.raises(LatticeError):
        SpinGrid(np.ones((1, 1), dtype=np.int8))
    bad = np.ones((4, 4), dtype=np.int8)
    bad[0, 1] = -1
    with pytest.raises(LatticeError):
        SpinGrid(bad, Boundary.FIXED_PLUS_ONE)


def test_decimate_examples():
    assert decimate_relabel(SpinGrid.uniform(4)) == SpinGrid.uniform(2)
    x = np.arange(16).reshape(4, 4)
    # u=0, v=1 reads old site (3, 1)
    spins = np.where(x == 13, -1, 1).astype(np.int8)
    out = decimate_relabel(SpinGrid(spins))
    assert out[0, 1] == -1 and (out.spins == -1).sum() == 1
    assert decimate_relabel(SpinGrid.checkerboard(4)) == SpinGrid.uniform(2)


def test_decimate_errors():
    with pytest.raises(LatticeError):
        decimate_relabel(SpinGrid.uniform(5))
    with pytest.raises(LatticeError):
        decimate_relabel(SpinGrid.uniform(4, 1, Boundary.FIXED_PLUS_ONE))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 6, 8, 12]))
def test_decimation_keeps_even_values(seed, L):
    g = SpinGrid.random(L, np.random.default_rng(seed))
    d = decimate_relabel(g)
    u, v = np.indices((L // 2, L // 2))
    src = ((u - v) % L, (u + v) % L)
    assert np.all((src[0] + src[1]) % 2 == 0)
    assert np.array_equal(d.spins, g.spins[src])


def test_relabel_halves_distance_over_offset_table():
    # every offset of every new-lattice shell maps to an old offset of twice the squared length
    for sh in SHELLS.values():
        old = shell_for_d2(2 * sh.d2)
        images = {relabel_offset(o) for o in sh.offsets}
        for a, b in images:
            assert a * a + b * b == 2 * sh.d2
            assert (a + b) % 2 == 0
        if old is not None:
            assert images == set(old.offsets)


def test_block_majority():
    rng = np.random.default_rng(1)
    assert block_majority(SpinGrid.uniform(4), rng) == SpinGrid.uniform(2)
    one = np.ones((4, 4), dtype=np.int8)
    one[1, 1] = -1
    assert block_majority(SpinGrid(one), rng)[0, 0] == 1
    t = np.ones((4, 4), dtype=np.int8)
    t[1, :2] = -1
    tie = SpinGrid(t)
    vals = np.array([block_majority(tie, np.random.default_rng(s))[0, 0] for s in range(400)])
    assert abs(vals.mean()) < 3 / np.sqrt(400)
    with pytest.raises(LatticeError):
        block_majority(SpinGrid.uniform(3), rng)


def test_extract_level_matches_repeated_decimation_window():
    g = SpinGrid.random(16, np.random.default_rng(3))
    assert np.array_equal(extract_level(g.spins, 2), decimate_relabel(g).spins)
    # two decimations keep one spin in four
    y4 = extract_level(g.spins, 3)
    assert y4.shape == (4, 4)
    u, v = np.indices((4, 4))
    assert np.array_equal(y4, g.spins[(-2 * v) % 16, (2 * u) % 16])


def test_level_geometry_sizes():
    x = np.ones((3, 16, 16), dtype=np.int8)
    assert level_geometry(x, 1)[0].shape == (3, 16, 16)
    y, rot = level_geometry(x, 2)
    assert rot and y.shape == (3, 16, 16)
    y, rot = level_geometry(x, 3)
    assert not rot and y.shape == (3, 8, 8)
    with pytest.raises(LatticeError):
        level_geometry(np.ones((6, 6)), 3)
