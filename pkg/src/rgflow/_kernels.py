"""Numba kernels for single-spin-flip Metropolis under ``exp(+K)`` weights."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import NumericalError
from .lattice import Boundary, interior_mask
from .shells import ALL_OFFSETS, MAX_SHELL, SHELLS

PAD = 8

_SHELL_START = np.zeros(MAX_SHELL + 1, dtype=np.int64)
_SHELL_N = np.zeros(MAX_SHELL + 1, dtype=np.int64)
_pos = 0
for _k, _sh in SHELLS.items():
    _SHELL_START[_k] = _pos
    _SHELL_N[_k] = _sh.n
    _pos += _sh.n
_OFFS = np.array(ALL_OFFSETS, dtype=np.int64)

_KIND = {"quadratic": 0, "quartic": 1, "mixed": 2}


@numba.njit(cache=True, nogil=True)
def _collective(x, J, I, k, nbr, shell_start, shell_n):
    # mean spin on shell k around J, and how many of those positions are I
    s = 0.0
    m = 0
    for o in range(shell_start[k], shell_start[k] + shell_n[k]):
        t = nbr[J, o]
        s += x[t]
        if t == I:
            m += 1
    return s / shell_n[k], m


@numba.njit(cache=True, nogil=True)
def delta_at(x, I, nbr, shell_start, shell_n, quad_k, quad_c, nq_kind, nq_k1, nq_k2, nq_c):
    """K(x with x_I flipped) - K(x)."""
    xi = float(x[I])
    d = 0.0
    for q in range(quad_k.shape[0]):
        k = quad_k[q]
        s = 0.0
        for o in range(shell_start[k], shell_start[k] + shell_n[k]):
            J = nbr[I, o]
            if J != I:
                s += x[J]
        d -= 4.0 * quad_c[q] / shell_n[k] * xi * s
    seen = np.empty(32, dtype=np.int64)
    for f in range(nq_kind.shape[0]):
        k1 = nq_k1[f]
        k2 = nq_k2[f]
        nseen = 0
        nsh = 1 if nq_kind[f] == 1 else 2
        for w in range(nsh):
            kk = k1 if w == 0 else k2
            for o in range(shell_start[kk], shell_start[kk] + shell_n[kk]):
                J = nbr[I, o]
                dup = False
                for z in range(nseen):
                    if seen[z] == J:
                        dup = True
                        break
                if not dup:
                    seen[nseen] = J
                    nseen += 1
        acc = 0.0
        for z in range(nseen):
            J = seen[z]
            X1, m1 = _collective(x, J, I, k1, nbr, shell_start, shell_n)
            Y1 = X1 - 2.0 * xi * m1 / shell_n[k1]
            if nq_kind[f] == 1:
                acc += Y1**4 - X1**4
            else:
                X2, m2 = _collective(x, J, I, k2, nbr, shell_start, shell_n)
                Y2 = X2 - 2.0 * xi * m2 / shell_n[k2]
                acc += Y1 * Y1 * Y2 * Y2 - X1 * X1 * X2 * X2
        d += nq_c[f] * acc
    return d


@numba.njit(cache=True, nogil=True)
def run_sweeps(x, flippable, uniforms, thin, out, nbr, shell_start, shell_n, quad_k, quad_c, nq_kind, nq_k1, nq_k2, nq_c):
    """Raster-scan sweeps; row ``s`` of ``uniforms`` drives sweep ``s``.

    After every ``thin`` sweeps the state is copied into the next row of
    ``out`` (pass a zero-row ``out`` to record nothing). Returns the number of
    accepted flips, or -1 if a non-finite energy change was met.
    """
    accepted = 0
    n_sweeps = uniforms.shape[0]
    row = 0
    for s in range(n_sweeps):
        for t in range(flippable.shape[0]):
            I = flippable[t]
            d = delta_at(x, I, nbr, shell_start, shell_n, quad_k, quad_c, nq_kind, nq_k1, nq_k2, nq_c)
            if not np.isfinite(d):
                return -1
            if d >= 0.0 or uniforms[s, t] < np.exp(d):
                x[I] = -x[I]
                accepted += 1
        if out.shape[0] > 0 and (s + 1) % thin == 0:
            for t in range(x.shape[0]):
                out[row, t] = x[t]
            row += 1
    return accepted


@dataclass(frozen=True, eq=False)
class HamiltonianProgram:
    """Flattened lattice plus coefficient tables ready for the kernels.

    Periodic grids are stored as ``L*L`` spins with wrapped neighbour indices;
    fixed-boundary grids are padded by ``PAD`` frozen +1 sites on each side.
    The constant function ``Q1`` is dropped: it never changes the weight.
    """

    L: int
    boundary: Boundary
    nbr: np.ndarray
    flippable: np.ndarray
    quad_k: np.ndarray
    quad_c: np.ndarray
    nq_kind: np.ndarray
    nq_k1: np.ndarray
    nq_k2: np.ndarray
    nq_c: np.ndarray

    @classmethod
    def build(cls, alpha, L: int, boundary=Boundary.PERIODIC) -> "HamiltonianProgram":
        boundary = Boundary(boundary)
        if boundary is Boundary.PERIODIC:
            M = L
            i, j = np.indices((M, M))
            ii = (i[..., None] + _OFFS[:, 0]) % M
            jj = (j[..., None] + _OFFS[:, 1]) % M
            nbr = (ii * M + jj).reshape(M * M, -1)
            flippable = np.arange(M * M)
        else:
            M = L + 2 * PAD
            i, j = np.indices((M, M))
            ii = i[..., None] + _OFFS[:, 0]
            jj = j[..., None] + _OFFS[:, 1]
            ok = (ii >= 0) & (ii < M) & (jj >= 0) & (jj < M)
            nbr = np.where(ok, ii * M + jj, 0).reshape(M * M, -1)
            inner = np.zeros((M, M), dtype=bool)
            inner[PAD : PAD + L, PAD : PAD + L] = interior_mask(L)
            flippable = np.flatnonzero(inner)
        qk, qc, kind, k1, k2, c = [], [], [], [], [], []
        for f, a in alpha.items():
            if a == 0.0 or (f.kind == "quadratic" and f.shells[0] == 1):
                continue
            if f.kind == "quadratic":
                qk.append(f.shells[0])
                qc.append(a)
            else:
                kind.append(_KIND[f.kind])
                k1.append(f.shells[0])
                k2.append(f.shells[-1])
                c.append(a)
        return cls(
            L,
            boundary,
            np.ascontiguousarray(nbr, dtype=np.int64),
            flippable.astype(np.int64),
            np.array(qk, dtype=np.int64),
            np.array(qc, dtype=float),
            np.array(kind, dtype=np.int64),
            np.array(k1, dtype=np.int64),
            np.array(k2, dtype=np.int64),
            np.array(c, dtype=float),
        )

    @property
    def args(self):
        return (
            self.nbr,
            _SHELL_START,
            _SHELL_N,
            self.quad_k,
            self.quad_c,
            self.nq_kind,
            self.nq_k1,
            self.nq_k2,
            self.nq_c,
        )

    @property
    def padded(self) -> bool:
        return self.boundary is Boundary.FIXED_PLUS_ONE

    def embed(self, spins: np.ndarray) -> np.ndarray:
        s = np.asarray(spins, dtype=np.int8)
        if self.padded:
            s = np.pad(s, PAD, constant_values=1)
        return np.array(s.reshape(-1), dtype=np.int8, order="C")  # always a writable copy

    def unembed(self, flat: np.ndarray) -> np.ndarray:
        """Flat state(s) back to ``(..., L, L)`` arrays."""
        M = self.L + 2 * PAD if self.padded else self.L
        a = flat.reshape(flat.shape[:-1] + (M, M))
        if self.padded:
            a = a[..., PAD : PAD + self.L, PAD : PAD + self.L]
        return a

    def index_of(self, site) -> int:
        i, j = site
        if self.padded:
            M = self.L + 2 * PAD
            return (i + PAD) * M + j + PAD
        return i * self.L + j

    def sweeps(self, flat, uniforms, thin=1, record=True):
        n = uniforms.shape[0] // thin if record else 0
        out = np.empty((n, flat.shape[0]), dtype=np.int8)
        acc = run_sweeps(flat, self.flippable, uniforms, thin, out, *self.args)
        if acc < 0:
            raise NumericalError(
                "non-finite energy change during Metropolis sweep; coefficients have blown up"
            )
        return out, acc
