"""Critical exponents from the chain rule, and magnetization with a +1 boundary."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import BasisSet, CoefficientVector, LatticeView, bare_hamiltonian
from .errors import ConfigurationError, LatticeError
from .lattice import Boundary, SpinGrid, level_geometry
from .projection import ridge_for
from .sampler import ChainConfig, Estimate, LevelStream, _initial_grid, iter_chain, metropolis_run, validate_geometry

__all__ = [
    "TC_EXACT",
    "ExponentResult",
    "chain_rule_matrix",
    "exponent_from_values",
    "exponent_matrices",
    "exponent_run",
    "block_exponent_run",
    "block_spins",
    "MagnetizationPoint",
    "MagnetizationCurve",
    "magnetization_run",
    "magnetization_curve",
    "onsager_magnetization",
]

log = logging.getLogger(__name__)

TC_EXACT = 2.0 / math.log(1.0 + math.sqrt(2.0))


@dataclass
class ExponentResult:
    """Linearized flow ``A[i, j] = d alpha_i^(n+1) / d alpha_j^(n)`` and its spectrum."""

    A: np.ndarray
    eigenvalues: np.ndarray  # complex, sorted by decreasing modulus
    names: list[str]
    b: float
    lambda_T: float | None = None
    y_T: float | None = None
    nu: float | None = None
    nu_stderr: float | None = None
    lambda_T_stderr: float | None = None
    imag_stderr: float | None = None
    n_samples: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def opt(v):
            return None if v is None else float(v)

        return {
            "names": self.names,
            "A": self.A.tolist(),
            "eigenvalues_real": self.eigenvalues.real.tolist(),
            "eigenvalues_imag": self.eigenvalues.imag.tolist(),
            "eigenvalues_modulus": np.abs(self.eigenvalues).tolist(),
            "b": self.b,
            "lambda_T": opt(self.lambda_T),
            "lambda_T_stderr": opt(self.lambda_T_stderr),
            "y_T": opt(self.y_T),
            "nu": opt(self.nu),
            "nu_stderr": opt(self.nu_stderr),
            "imag_stderr": opt(self.imag_stderr),
            "n_samples": self.n_samples,
            "notes": self.notes,
        }


def chain_rule_matrix(phi_n: np.ndarray, phi_n1: np.ndarray, ridge: float | None = None) -> np.ndarray:
    """Solve ``C A = D`` with ``D = cov(phi^(n+1), phi^(n))`` and ``C = cov(phi^(n+1), phi^(n+1))``.

    Both inputs are sample arrays ``(S, F)`` with matching columns.
    """
    a = np.asarray(phi_n, float)
    c = np.asarray(phi_n1, float)
    if a.shape != c.shape or a.ndim != 2:
        raise ConfigurationError("value arrays must both be (samples, functions)")
    a = a - a.mean(axis=0)
    c = c - c.mean(axis=0)
    S = a.shape[0]
    D = c.T @ a / (S - 1)
    C = c.T @ c / (S - 1)
    lam = ridge_for(C) if ridge is None else ridge
    return np.linalg.solve(C + lam * np.eye(len(C)), D)


def _thermal(eigs: np.ndarray, tol_imag: float = 1e-9):
    """Largest real eigenvalue above 1; a complex pair counts as real when its
    imaginary part is tiny relative to the modulus."""
    cands = [e for e in eigs if abs(e.imag) <= tol_imag * max(1.0, abs(e)) and e.real > 1.0]
    if not cands:
        # accept the dominant eigenvalue if its imaginary part is only noise
        cands = [e for e in eigs if e.real > 1.0]
    return max(cands, key=lambda e: e.real) if cands else None


def _sorted_eigs(A):
    e = np.linalg.eigvals(A)
    return e[np.argsort(-np.abs(e), kind="stable")]


def exponent_from_values(
    phi_n: np.ndarray,
    phi_n1: np.ndarray,
    names: Sequence[str],
    b: float = math.sqrt(2.0),
    n_boot: int = 200,
    n_blocks: int = 20,
    seed: int = 0,
) -> ExponentResult:
    """Exponent analysis on aligned basis values of two successive levels.

    Columns with no variance at either level (the constant ``Q1``) are
    dropped. Errors come from a bootstrap over contiguous blocks.
    """
    a = np.asarray(phi_n, float)
    c = np.asarray(phi_n1, float)
    if a.shape != c.shape:
        raise LatticeError(f"streams are not aligned: {a.shape} vs {c.shape}")
    if a.shape[0] < 3:
        raise ConfigurationError("need at least 3 aligned samples")
    keep = (a.std(axis=0) > 1e-12) & (c.std(axis=0) > 1e-12)
    names = [n for n, k in zip(names, keep) if k]
    a, c = a[:, keep], c[:, keep]
    A = chain_rule_matrix(a, c)
    eigs = _sorted_eigs(A)
    res = ExponentResult(A, eigs, names, float(b), n_samples=a.shape[0])
    lam = _thermal(eigs)
    if lam is None:
        res.notes.append("no eigenvalue above 1; no exponent reported")
        warnings.warn("no eigenvalue of the linearized flow exceeds 1")
        return res
    res.lambda_T = float(lam.real)
    res.y_T = math.log(res.lambda_T) / math.log(b)
    res.nu = 1.0 / res.y_T

    S = a.shape[0]
    n_blocks = max(2, min(n_blocks, S // 2))
    edges = np.linspace(0, S, n_blocks + 1).astype(int)
    blocks = [np.arange(edges[i], edges[i + 1]) for i in range(n_blocks)]
    rng = np.random.default_rng(seed)
    lams, imags, nus = [], [], []
    for _ in range(n_boot):
        idx = np.concatenate([blocks[i] for i in rng.integers(0, n_blocks, n_blocks)])
        e = _sorted_eigs(chain_rule_matrix(a[idx], c[idx]))
        # follow the eigenvalue closest to the full-sample thermal one
        j = int(np.argmin(np.abs(e - lam)))
        lams.append(e[j].real)
        imags.append(e[j].imag)
        if e[j].real > 1.0:
            nus.append(math.log(b) / math.log(e[j].real))
    res.lambda_T_stderr = float(np.std(lams, ddof=1))
    res.imag_stderr = float(np.std(imags, ddof=1))
    res.nu_stderr = float(np.std(nus, ddof=1)) if len(nus) > 1 else None
    if abs(lam.imag) > 3 * max(res.imag_stderr, 1e-15):
        res.notes.append(f"thermal eigenvalue has imaginary part {lam.imag:.3g} beyond 3 bootstrap stderr")
    return res


def _aligned(stream_n: LevelStream, stream_n1: LevelStream):
    if len(stream_n) != len(stream_n1):
        raise LatticeError(f"streams are not aligned: {len(stream_n)} vs {len(stream_n1)} samples")
    if stream_n1.level != stream_n.level + 1:
        raise LatticeError(f"levels {stream_n.level} and {stream_n1.level} are not successive")
    src_a, src_b = stream_n.source, stream_n1.source
    if src_a is not None and src_b is not None and src_a is not src_b and not np.array_equal(src_a, src_b):
        raise LatticeError("streams come from different source samples")


def exponent_matrices(stream_n: LevelStream, stream_n1: LevelStream, basis: BasisSet, **kw) -> ExponentResult:
    """Chain-rule matrix between two index-aligned levels of one ensemble.

    ``phi`` values are extensive sums over each level lattice: the column
    index of ``A`` refers to coefficients of those sums, so the relative
    size of the two lattices must stay in the covariances.
    """
    _aligned(stream_n, stream_n1)
    return exponent_from_values(
        stream_n.basis_values(basis), stream_n1.basis_values(basis), basis.names, **kw
    )


def exponent_run(
    T: float,
    L0: int,
    levels: tuple[int, int],
    basis: BasisSet,
    cfg: ChainConfig,
    initial: str = "up",
    batch: int = 64,
    **kw,
) -> ExponentResult:
    """Sample the bare model and analyse the level pair without storing configurations."""
    n, n1 = levels
    if n1 != n + 1 or n < 1:
        raise ConfigurationError(f"levels must be successive, got {levels}")
    validate_geometry(L0, (n, n1))
    bare = bare_hamiltonian(T, basis)
    va, vb = [], []
    for rng in cfg.chain_rngs():
        for stack in iter_chain(_initial_grid(L0, initial, cfg), bare, cfg, rng, batch=batch):
            for lev, out in ((n, va), (n1, vb)):
                y, rot = level_geometry(stack, lev)
                out.append(LatticeView(y, rotated=rot).evaluate_many(basis))
    kw.setdefault("seed", cfg.seed)
    return exponent_from_values(np.concatenate(va), np.concatenate(vb), basis.names, **kw)


def block_spins(stack: np.ndarray, rule: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """One 2x2 blocking step on a stack ``(S, L, L)``.

    ``pick-one`` keeps the top-left spin of every block; ``majority`` takes
    the sign of the block sum with ties broken by fair coins from ``rng``.
    """
    x = np.asarray(stack)
    if x.shape[-1] % 2:
        raise LatticeError("2x2 blocking needs an even lattice size")
    if rule == "pick-one":
        return x[..., ::2, ::2]
    if rule == "majority":
        if rng is None:
            raise ConfigurationError("majority rule needs a generator for tie breaks")
        t = (
            x[..., 0::2, 0::2].astype(np.int16) + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2]
        )
        coin = np.where(rng.random(t.shape) < 0.5, -1, 1)
        return np.where(t > 0, 1, np.where(t < 0, -1, coin)).astype(np.int8)
    raise ConfigurationError(f"unknown blocking rule {rule!r}")


def block_exponent_run(
    T: float,
    L0: int,
    rule: str,
    basis: BasisSet,
    cfg: ChainConfig,
    step: int = 1,
    batch: int = 64,
    **kw,
) -> ExponentResult:
    """Exponent from 2x2 blocking (``b = 2``) between blocking steps ``step`` and ``step+1``.

    Used to compare the majority and pick-one rules on the same samples.
    """
    if step < 0 or L0 % (1 << (step + 1)) or (L0 >> (step + 1)) < 4:
        raise ConfigurationError(f"L0={L0} cannot be blocked {step + 1} times")
    bare = bare_hamiltonian(T, basis)
    tie = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains + 1)[-1])
    va, vb = [], []
    for rng in cfg.chain_rngs():
        for stack in iter_chain(_initial_grid(L0, "up", cfg), bare, cfg, rng, batch=batch):
            y = stack
            for _ in range(step):
                y = block_spins(y, rule, tie)
            z = block_spins(y, rule, tie)
            va.append(LatticeView(y).evaluate_many(basis))
            vb.append(LatticeView(z).evaluate_many(basis))
    kw.setdefault("seed", cfg.seed)
    return exponent_from_values(np.concatenate(va), np.concatenate(vb), basis.names, b=2.0, **kw)


def onsager_magnetization(T: float) -> float:
    """Spontaneous magnetization of the infinite square lattice."""
    if not T > 0:
        raise ConfigurationError(f"temperature must be positive, got {T}")
    if T >= TC_EXACT:
        return 0.0
    s = math.sinh(2.0 / T)
    return (1.0 - s**-4) ** 0.125


@dataclass(frozen=True)
class MagnetizationPoint:
    T: float | None
    m: float
    stderr: float
    n_samples: int


@dataclass
class MagnetizationCurve:
    points: list[MagnetizationPoint]
    L: int
    source: str

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "m", "stderr", "onsager", "L", "source"])
            for p in self.points:
                ons = "" if p.T is None else repr(onsager_magnetization(p.T))
                w.writerow(["" if p.T is None else repr(float(p.T)), repr(p.m), repr(p.stderr), ons, self.L, self.source])


def magnetization_run(
    source: CoefficientVector,
    L: int,
    cfg: ChainConfig,
    T: float | None = None,
    boundary=Boundary.FIXED_PLUS_ONE,
    threads: int = 1,
) -> MagnetizationPoint:
    """Mean interior spin under ``exp(K_source)`` with every boundary spin fixed to +1.

    ``T`` only labels the point; the temperature is already inside
    ``source``.
    """
    if Boundary(boundary) is not Boundary.FIXED_PLUS_ONE:
        raise ConfigurationError("magnetization needs the fixed +1 boundary: with periodic boundaries m averages to 0")
    res = metropolis_run(SpinGrid.uniform(L, 1, Boundary.FIXED_PLUS_ONE), source, cfg, threads=threads)
    est: Estimate = res.estimates["m"]
    return MagnetizationPoint(T, est.mean, est.stderr, est.n_samples)


def magnetization_curve(
    sources: Sequence[tuple[float, CoefficientVector]],
    L: int,
    cfg: ChainConfig,
    label: str = "bare",
    threads: int = 1,
) -> MagnetizationCurve:
    pts = [magnetization_run(alpha, L, cfg, T=T, threads=threads) for T, alpha in sources]
    return MagnetizationCurve(pts, L, label)
