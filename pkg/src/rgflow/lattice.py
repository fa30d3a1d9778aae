"""Square-lattice spin geometry: grids, parity, shells and decimation maps."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import LatticeError
from .shells import get_shell

__all__ = [
    "Boundary",
    "Parity",
    "Site",
    "SpinGrid",
    "parity",
    "shell_sites",
    "decimate_relabel",
    "block_majority",
    "extract_level",
    "level_geometry",
    "relabel_offset",
]


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    FIXED_PLUS_ONE = "fixed"


class Parity(str, enum.Enum):
    EVEN = "even"
    ODD = "odd"


class Site(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True, eq=False)
class SpinGrid:
    """An ``L x L`` array of Ising spins with its boundary condition.

    With ``Boundary.FIXED_PLUS_ONE`` the outermost ring is frozen at +1 and
    every site outside the array reads as +1 as well.
    """

    spins: np.ndarray
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        s = np.asarray(self.spins)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise LatticeError(f"spins must be a square 2-d array, got shape {s.shape}")
        if s.shape[0] < 2:
            raise LatticeError("lattice size must be at least 2")
        if not np.all((s == 1) | (s == -1)):
            raise LatticeError("spin values must be exactly -1 or +1")
        s = s.astype(np.int8, copy=True)
        boundary = Boundary(self.boundary)
        if boundary is Boundary.FIXED_PLUS_ONE:
            ring = ~interior_mask(s.shape[0])
            if np.any(s[ring] != 1):
                raise LatticeError("fixed boundary requires +1 on the outermost ring")
        s.setflags(write=False)
        object.__setattr__(self, "spins", s)
        object.__setattr__(self, "boundary", boundary)

    @property
    def L(self) -> int:
        return self.spins.shape[0]

    @classmethod
    def uniform(cls, L: int, value: int = 1, boundary=Boundary.PERIODIC) -> "SpinGrid":
        return cls(np.full((L, L), value, dtype=np.int8), boundary)

    @classmethod
    def checkerboard(cls, L: int) -> "SpinGrid":
        i, j = np.indices((L, L))
        return cls(np.where((i + j) % 2 == 0, 1, -1).astype(np.int8))

    @classmethod
    def random(cls, L: int, rng: np.random.Generator, boundary=Boundary.PERIODIC) -> "SpinGrid":
        s = rng.choice(np.array([-1, 1], dtype=np.int8), size=(L, L))
        if Boundary(boundary) is Boundary.FIXED_PLUS_ONE:
            s[~interior_mask(L)] = 1
        return cls(s, boundary)

    def with_spins(self, spins: np.ndarray) -> "SpinGrid":
        return SpinGrid(spins, self.boundary)

    def __getitem__(self, site) -> int:
        i, j = site
        return int(self.spins[i, j])

    def __eq__(self, other):
        if not isinstance(other, SpinGrid):
            return NotImplemented
        return self.boundary is other.boundary and np.array_equal(self.spins, other.spins)

    def __repr__(self):
        return f"SpinGrid(L={self.L}, boundary={self.boundary.value})"


def interior_mask(L: int) -> np.ndarray:
    """Sites not on the outermost ring."""
    m = np.zeros((L, L), dtype=bool)
    m[1:-1, 1:-1] = True
    return m


def parity(site) -> Parity:
    i, j = site
    return Parity.EVEN if (i + j) % 2 == 0 else Parity.ODD


def parity_mask(L: int, which: Parity = Parity.EVEN) -> np.ndarray:
    i, j = np.indices((L, L))
    even = (i + j) % 2 == 0
    return even if Parity(which) is Parity.EVEN else ~even


def shell_sites(grid: SpinGrid, center, shell: int) -> list[tuple[int, int]]:
    """Sites of ``shell`` around ``center``, in offset-table order.

    Periodic grids wrap. On fixed-boundary grids the returned coordinates may
    fall outside the array; those positions belong to the frozen +1 region.
    """
    sh = get_shell(shell)
    i, j = center
    L = grid.L
    if not (0 <= i < L and 0 <= j < L):
        raise LatticeError(f"site {center} outside a {L}x{L} grid")
    if grid.boundary is Boundary.PERIODIC:
        return [((i + di) % L, (j + dj) % L) for di, dj in sh.offsets]
    return [(i + di, j + dj) for di, dj in sh.offsets]


def _require_decimable(grid: SpinGrid):
    if grid.boundary is not Boundary.PERIODIC:
        raise LatticeError("decimation is only defined for periodic grids")
    if grid.L % 2:
        raise LatticeError(f"decimation needs an even lattice size, got L={grid.L}")


def decimate_relabel(grid: SpinGrid) -> SpinGrid:
    """Keep the even sublattice and relabel it onto an ``L/2`` square window.

    ``x'(u, v) = x((u - v) mod L, (u + v) mod L)``; the new lattice is the old
    one rotated by 45 degrees with nearest neighbours at old distance sqrt(2).
    """
    _require_decimable(grid)
    L = grid.L
    u, v = np.indices((L // 2, L // 2))
    return SpinGrid(grid.spins[(u - v) % L, (u + v) % L])


def relabel_offset(offset) -> tuple[int, int]:
    """Old-lattice offset corresponding to a new-lattice offset."""
    du, dv = offset
    return du - dv, du + dv


def block_majority(grid: SpinGrid, rng: np.random.Generator) -> SpinGrid:
    """2x2 majority rule with ties broken by fair coin flips from ``rng``."""
    _require_decimable(grid)
    s = grid.spins.astype(np.int16)
    total = s[0::2, 0::2] + s[1::2, 0::2] + s[0::2, 1::2] + s[1::2, 1::2]
    coin = rng.choice(np.array([-1, 1], dtype=np.int16), size=total.shape)
    out = np.where(total > 0, 1, np.where(total < 0, -1, coin))
    return SpinGrid(out.astype(np.int8))


def extract_level(spins: np.ndarray, level: int) -> np.ndarray:
    """Window of the level-``level`` lattice cut from level-1 configurations.

    Works on a single ``(L, L)`` array or a stack ``(S, L, L)``. The window has
    side ``L / 2**(level-1)`` and reads ``x(R^(level-1) (u, v) mod L)`` with
    ``R(u, v) = (u - v, u + v)``. For level 2 this is exactly
    :func:`decimate_relabel`; deeper levels compose the rotation before
    reducing modulo ``L`` so the window stays a contiguous patch of the true
    decimated lattice.
    """
    spins = np.asarray(spins)
    L = spins.shape[-1]
    if level < 1:
        raise LatticeError("levels start at 1")
    side = L >> (level - 1)
    if side < 1 or side << (level - 1) != L:
        raise LatticeError(f"L={L} not divisible by 2**{level - 1}")
    u, v = np.indices((side, side))
    a, b = u, v
    for _ in range(level - 1):
        a, b = a - b, a + b
    return spins[..., a % L, b % L]


def level_geometry(spins: np.ndarray, level: int) -> tuple[np.ndarray, bool]:
    """The full level-``level`` lattice as ``(y, rotated)``.

    Odd levels are plain tori ``y = x[::2**m, ::2**m]``. Even levels are the
    even sublattice of such a torus, with level offsets mapped through
    ``(du, dv) -> (du - dv, du + dv)``; ``rotated`` flags that case. Nothing
    is discarded and no seams appear.
    """
    spins = np.asarray(spins)
    L = spins.shape[-1]
    m, rotated = divmod(level - 1, 2)
    step = 1 << m
    if L % step or (L // step) % 2:
        raise LatticeError(f"L={L} too small or not divisible for level {level}")
    return spins[..., ::step, ::step], bool(rotated)
