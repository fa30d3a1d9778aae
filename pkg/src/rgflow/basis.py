"""Translation-invariant basis functions built from shell averages.

A configuration weight is ``exp(K(x))`` with ``K = sum_k alpha_k phi_k``.
Three kinds of basis function are supported:

* ``Quadratic(k)  = sum_J x_J X_{k,J}``
* ``Quartic(k)    = sum_J X_{k,J}**4``
* ``Mixed(k, k2)  = sum_J X_{k,J}**2 X_{k2,J}**2``

where ``X_{k,J}`` is the mean spin on shell ``k`` around ``J``.

All heavy lifting goes through :class:`LatticeView`, which evaluates shell
averages, per-site terms and site derivatives for a whole stack of
configurations at once.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, LatticeError
from .lattice import Boundary, SpinGrid
from .shells import get_shell, shell_for_d2

__all__ = [
    "BasisFunction",
    "Quadratic",
    "Quartic",
    "Mixed",
    "BasisSet",
    "SMALL",
    "FULL",
    "CoefficientVector",
    "LatticeView",
    "collective",
    "eval_basis",
    "site_derivative",
    "relabel_index",
    "bare_hamiltonian",
    "local_delta",
    "parse_basis",
]

HALO = 4  # largest shell radius
PAD = 2 * HALO  # fixed-boundary padding: halo sites need their own shells


@dataclass(frozen=True)
class BasisFunction:
    kind: str  # "quadratic" | "quartic" | "mixed"
    shells: tuple[int, ...]

    def __post_init__(self):
        expected = {"quadratic": 1, "quartic": 1, "mixed": 2}
        if self.kind not in expected or len(self.shells) != expected[self.kind]:
            raise ConfigurationError(f"bad basis function {self.kind}{self.shells}")
        for k in self.shells:
            get_shell(k)

    @property
    def name(self) -> str:
        if self.kind == "quadratic":
            return f"Q{self.shells[0]}"
        if self.kind == "quartic":
            return f"X4_{self.shells[0]}"
        return f"M{self.shells[0]}_{self.shells[1]}"

    def __str__(self):
        return self.name


def Quadratic(k: int) -> BasisFunction:
    return BasisFunction("quadratic", (k,))


def Quartic(k: int) -> BasisFunction:
    return BasisFunction("quartic", (k,))


def Mixed(k: int, k2: int) -> BasisFunction:
    return BasisFunction("mixed", (k, k2))


_NAME_RE = re.compile(r"^(?:Q(\d+)|X4_(\d+)|M(\d+)_(\d+))$")


def parse_function(name: str) -> BasisFunction:
    m = _NAME_RE.match(name.strip())
    if not m:
        raise ConfigurationError(f"cannot parse basis function {name!r} (use Q<k>, X4_<k>, M<k>_<k2>)")
    q, x4, m1, m2 = m.groups()
    if q:
        return Quadratic(int(q))
    if x4:
        return Quartic(int(x4))
    return Mixed(int(m1), int(m2))


@dataclass(frozen=True)
class BasisSet:
    name: str
    functions: tuple[BasisFunction, ...]

    def __post_init__(self):
        if len(set(self.functions)) != len(self.functions):
            raise ConfigurationError(f"basis {self.name!r} contains duplicates")

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, i):
        return self.functions[i]

    def index(self, f: BasisFunction) -> int:
        return self.functions.index(f)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.functions]


FULL = BasisSet(
    "full10",
    tuple(Quadratic(k) for k in range(1, 7))
    + tuple(Quartic(k) for k in (2, 3, 4))
    + (Mixed(2, 3),),
)
SMALL = BasisSet(
    "small6",
    tuple(Quadratic(k) for k in range(1, 5)) + (Quartic(2), Quartic(3)),
)
PRESETS = {FULL.name: FULL, SMALL.name: SMALL}


def parse_basis(spec: str | Sequence[str]) -> BasisSet:
    """A preset name (``small6``, ``full10``) or a comma separated function list."""
    if isinstance(spec, str):
        if spec in PRESETS:
            return PRESETS[spec]
        spec = spec.split(",")
    fns = tuple(parse_function(s) for s in spec)
    return BasisSet(",".join(f.name for f in fns), fns)


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    basis: BasisSet
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape[0] != len(self.basis):
            raise ConfigurationError(f"{v.shape[0]} coefficients for a basis of {len(self.basis)}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("coefficients must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, basis: BasisSet) -> "CoefficientVector":
        return cls(basis, np.zeros(len(basis)))

    def __getitem__(self, f: BasisFunction | int) -> float:
        if isinstance(f, BasisFunction):
            f = self.basis.index(f)
        return float(self.values[f])

    def __len__(self):
        return len(self.values)

    def items(self):
        return zip(self.basis.functions, self.values)

    def __eq__(self, other):
        if not isinstance(other, CoefficientVector):
            return NotImplemented
        return self.basis == other.basis and np.array_equal(self.values, other.values)

    def __repr__(self):
        body = ", ".join(f"{f.name}={a:.4g}" for f, a in self.items())
        return f"CoefficientVector({body})"


class LatticeView:
    """Vectorized basis evaluation on a stack of configurations.

    Parameters
    ----------
    spins : array (S, M, M) or (M, M)
        Spin values on a periodic ``M x M`` array.
    rotated : bool
        If true the lattice being described is the even sublattice of the
        array, and a lattice offset ``(du, dv)`` is the array offset
        ``(du - dv, du + dv)``.
    sites : bool array (M, M), optional
        Summation sites for :meth:`evaluate`. Defaults to every lattice site.
    """

    def __init__(self, spins, rotated: bool = False, sites: np.ndarray | None = None):
        y = np.asarray(spins, dtype=float)
        self.single = y.ndim == 2
        if self.single:
            y = y[None]
        self.y = y
        self.M = y.shape[-1]
        self.rotated = rotated
        if rotated and self.M % 2:
            raise LatticeError("a rotated view needs an even array size")
        self._sites = sites
        self._X: dict[int, np.ndarray] = {}

    def offset(self, d) -> tuple[int, int]:
        du, dv = d
        return (du - dv, du + dv) if self.rotated else (du, dv)

    def shift(self, field: np.ndarray, d) -> np.ndarray:
        """``out[J] = field[J + d]`` for a lattice offset ``d``."""
        a, b = self.offset(d)
        return np.roll(field, (-a, -b), axis=(-2, -1))

    @cached_property
    def lattice_sites(self) -> np.ndarray:
        if self._sites is not None:
            return self._sites
        i, j = np.indices((self.M, self.M))
        if self.rotated:
            return (i + j) % 2 == 0
        return np.ones((self.M, self.M), dtype=bool)

    @cached_property
    def even_centers(self) -> np.ndarray:
        """Lattice sites of even lattice parity: the ones kept by decimation."""
        i, j = np.indices((self.M, self.M))
        if self.rotated:
            return (i % 2 == 0) & (j % 2 == 0)
        return (i + j) % 2 == 0

    def X(self, k: int) -> np.ndarray:
        """Shell average ``X_{k,J}`` at every array position."""
        if k not in self._X:
            sh = get_shell(k)
            acc = np.zeros_like(self.y)
            for d in sh.offsets:
                acc += self.shift(self.y, d)
            self._X[k] = acc / sh.n
        return self._X[k]

    def terms(self, f: BasisFunction) -> np.ndarray:
        if f.kind == "quadratic":
            return self.y * self.X(f.shells[0])
        if f.kind == "quartic":
            return self.X(f.shells[0]) ** 4
        k, k2 = f.shells
        return self.X(k) ** 2 * self.X(k2) ** 2

    def _shell_sum(self, field: np.ndarray, k: int) -> np.ndarray:
        acc = np.zeros_like(field)
        for d in get_shell(k).offsets:
            acc += self.shift(field, d)
        return acc

    def derivative(self, f: BasisFunction) -> np.ndarray:
        """Polynomial partial derivative of ``f`` with respect to each spin."""
        if f.kind == "quadratic":
            return 2.0 * self.X(f.shells[0])
        if f.kind == "quartic":
            k = f.shells[0]
            return 4.0 / get_shell(k).n * self._shell_sum(self.X(k) * self.X(k) * self.X(k), k)
        k, k2 = f.shells
        Xk, Xk2 = self.X(k), self.X(k2)
        prod = Xk * Xk2
        return 2.0 / get_shell(k).n * self._shell_sum(prod * Xk2, k) + 2.0 / get_shell(
            k2
        ).n * self._shell_sum(prod * Xk, k2)

    def evaluate(self, f: BasisFunction) -> np.ndarray:
        """Per-configuration value of ``f`` summed over the summation sites."""
        out = self.terms(f)[..., self.lattice_sites].sum(axis=-1)
        return out[0] if self.single else out

    def evaluate_many(self, basis: Iterable[BasisFunction]) -> np.ndarray:
        """Array (S, F) of basis values."""
        vals = np.stack([np.atleast_1d(self.evaluate(f)) for f in basis], axis=-1)
        return vals[0] if self.single else vals

    def energy(self, alpha: CoefficientVector) -> np.ndarray:
        """``K = sum alpha_k phi_k`` per configuration."""
        return self.evaluate_many(alpha.basis) @ alpha.values

    def center_values(self, fields: Sequence[np.ndarray], mask: np.ndarray | None = None) -> np.ndarray:
        """Stack fields at the chosen centers: array (S, F, n_centers)."""
        mask = self.even_centers if mask is None else mask
        return np.stack([fld[..., mask] for fld in fields], axis=1)


def _view(grid: SpinGrid) -> tuple[LatticeView, int]:
    """View over a grid plus the array offset of grid site (0, 0)."""
    if grid.boundary is Boundary.PERIODIC:
        return LatticeView(grid.spins), 0
    padded = np.pad(grid.spins, PAD, constant_values=1)
    M = padded.shape[0]
    sites = np.zeros((M, M), dtype=bool)
    sites[PAD - HALO : M - PAD + HALO, PAD - HALO : M - PAD + HALO] = True
    return LatticeView(padded, sites=sites), PAD


def _check_site(grid: SpinGrid, site):
    i, j = site
    if not (0 <= i < grid.L and 0 <= j < grid.L):
        raise LatticeError(f"site {site} outside a {grid.L}x{grid.L} grid")


def collective(grid: SpinGrid, shell: int, site) -> float:
    """Mean spin on ``shell`` around ``site``."""
    get_shell(shell)
    _check_site(grid, site)
    view, p = _view(grid)
    return float(view.X(shell)[0, site[0] + p, site[1] + p])


def eval_basis(grid: SpinGrid, f: BasisFunction) -> float:
    """Value of a basis function on a grid.

    Periodic grids sum over every site. Fixed-boundary grids sum over the
    array plus a halo of frozen sites wide enough to contain every term that
    depends on a spin of the array.
    """
    view, _ = _view(grid)
    return float(view.evaluate(f))


def site_derivative(grid: SpinGrid, f: BasisFunction, site) -> float:
    _check_site(grid, site)
    view, p = _view(grid)
    return float(view.derivative(f)[0, site[0] + p, site[1] + p])


def relabel_index(k: int) -> int:
    """Shell index after decimation and relabelling (squared distance halves)."""
    sh = get_shell(k)
    if sh.parity != "even":
        raise ConfigurationError(f"shell {k} has odd parity and vanishes under decimation")
    return shell_for_d2(sh.d2 // 2).index


def preimage_index(k: int) -> int:
    """Shell whose relabelled image is ``k``."""
    sh = get_shell(k)
    target = shell_for_d2(2 * sh.d2)
    if target is None:
        raise ConfigurationError(
            f"shell {k} (d^2={sh.d2}) has no preimage: shell with d^2={2 * sh.d2} is missing from the table"
        )
    return target.index


def bare_hamiltonian(T: float, basis: BasisSet) -> CoefficientVector:
    """Nearest-neighbour coupling ``(1/T) sum_bonds x_I x_J`` as a coefficient vector.

    ``sum_bonds x_I x_J = 2 * Quadratic(2)`` so the only entry is ``2/T``.
    """
    if not T > 0:
        raise ConfigurationError(f"temperature must be positive, got {T}")
    q2 = Quadratic(2)
    if q2 not in basis.functions:
        raise ConfigurationError("basis must contain Q2 to represent the bare Hamiltonian")
    v = np.zeros(len(basis))
    v[basis.index(q2)] = 2.0 / T
    return CoefficientVector(basis, v)


def local_delta(grid: SpinGrid, alpha: CoefficientVector, site) -> float:
    """Change of ``K = sum alpha_k phi_k`` when the spin at ``site`` is flipped."""
    from . import _kernels

    _check_site(grid, site)
    if grid.boundary is Boundary.FIXED_PLUS_ONE and not (
        0 < site[0] < grid.L - 1 and 0 < site[1] < grid.L - 1
    ):
        raise LatticeError(f"site {site} is on the frozen boundary")
    prog = _kernels.HamiltonianProgram.build(alpha, grid.L, grid.boundary)
    flat = prog.embed(grid.spins)
    return float(_kernels.delta_at(flat, prog.index_of(site), *prog.args))
