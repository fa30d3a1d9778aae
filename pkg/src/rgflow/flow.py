"""Parameter flow: repeated renormalization from one bare Monte-Carlo run.

Every level ``n`` ensemble is the ``n-1`` times decimated bare ensemble, so
the coefficients ``alpha^(n+1)`` are always obtained by projecting on samples
of the exact decimated measure, never on samples of a truncated Hamiltonian.
"""
from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import BasisSet, CoefficientVector, LatticeView, bare_hamiltonian, parse_basis
from .errors import ConfigurationError
from .lattice import level_geometry
from .projection import build_target_basis, solve_gram, view_moments
from .sampler import ChainConfig, _initial_grid, iter_chain, validate_geometry
from .shells import get_shell

__all__ = [
    "FlowTable",
    "second_moment",
    "run_flow",
    "TcScanResult",
    "tc_scan",
    "classify_trajectory",
]

log = logging.getLogger(__name__)


def second_moment(alpha: CoefficientVector) -> float:
    """``M2 = sum_k d_k^2 alpha_k`` over the quadratic entries with ``k >= 2``."""
    total = 0.0
    for f, a in alpha.items():
        if f.kind == "quadratic" and f.shells[0] >= 2:
            total += get_shell(f.shells[0]).d2 * a
    return total


def _m2_weights(basis: BasisSet) -> np.ndarray:
    w = np.zeros(len(basis))
    for i, f in enumerate(basis):
        if f.kind == "quadratic" and f.shells[0] >= 2:
            w[i] = get_shell(f.shells[0]).d2
    return w


@dataclass
class FlowTable:
    """Coefficients ``alpha^(n)`` for ``n = 1..N`` with jackknife errors."""

    T: float
    basis: BasisSet
    alphas: list[CoefficientVector]
    stderr: np.ndarray  # (N, F)
    m2: np.ndarray = field(init=False)
    m2_stderr: np.ndarray | None = None
    n_samples: int = 0

    def __post_init__(self):
        if not self.alphas:
            raise ConfigurationError("a flow table needs at least one row")
        for a in self.alphas:
            if a.basis != self.basis:
                raise ConfigurationError("all rows must share the table basis")
        self.stderr = np.asarray(self.stderr, dtype=float).reshape(len(self.alphas), len(self.basis))
        self.m2 = np.array([second_moment(a) for a in self.alphas])
        if self.m2_stderr is None:
            self.m2_stderr = np.abs(self.stderr) @ _m2_weights(self.basis)

    def __len__(self):
        return len(self.alphas)

    def row(self, n: int) -> CoefficientVector:
        """Coefficients of iteration ``n`` (1-based, as in the table)."""
        if not 1 <= n <= len(self.alphas):
            raise ConfigurationError(f"flow table has rows 1..{len(self.alphas)}, asked for {n}")
        return self.alphas[n - 1]

    @property
    def values(self) -> np.ndarray:
        return np.stack([a.values for a in self.alphas])

    def header(self) -> list[str]:
        names = self.basis.names
        return ["iteration", "T", *names, "M2", *(f"se_{n}" for n in names), "se_M2"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for n, a in enumerate(self.alphas):
                w.writerow(
                    [n + 1, repr(float(self.T))]
                    + [repr(float(v)) for v in a.values]
                    + [repr(float(self.m2[n]))]
                    + [repr(float(v)) for v in self.stderr[n]]
                    + [repr(float(self.m2_stderr[n]))]
                )

    @classmethod
    def from_csv(cls, path) -> "FlowTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ConfigurationError(f"{path}: no flow rows")
        head = rows[0]
        try:
            m2_col = head.index("M2")
        except ValueError:
            raise ConfigurationError(f"{path}: not a flow table (no M2 column)") from None
        names = head[2:m2_col]
        basis = parse_basis(names)
        for preset in (parse_basis("full10"), parse_basis("small6")):
            if preset.functions == basis.functions:
                basis = preset
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        F = len(names)
        alphas = [CoefficientVector(basis, r[2 : 2 + F]) for r in body]
        se = body[:, m2_col + 1 : m2_col + 1 + F]
        return cls(float(body[0, 1]), basis, alphas, se, body[:, -1], 0)


class _BlockAccumulator:
    """Per-block sums of the center-averaged moments, one set per level."""

    def __init__(self, n_levels: int, n_blocks: int, n_src: int, n_tgt: int, n_total: int):
        self.n_blocks = n_blocks
        self.n_total = n_total
        self.pp = np.zeros((n_levels, n_blocks, n_tgt, n_tgt))
        self.sp = np.zeros((n_levels, n_blocks, n_src, n_tgt))
        self.count = np.zeros(n_blocks)

    def block_of(self, index: np.ndarray) -> np.ndarray:
        return (index * self.n_blocks) // self.n_total

    def add(self, level_idx: int, index: np.ndarray, mom):
        blocks = self.block_of(index)
        np.add.at(self.pp[level_idx], blocks, mom.psi_psi)
        np.add.at(self.sp[level_idx], blocks, mom.src_psi)
        if level_idx == 0:
            np.add.at(self.count, blocks, 1)

    def merge(self, other: "_BlockAccumulator"):
        self.pp += other.pp
        self.sp += other.sp
        self.count += other.count


def _flow_from_means(alpha1: np.ndarray, pp: np.ndarray, sp: np.ndarray, dest: np.ndarray) -> np.ndarray:
    """Iterate the projection on mean moments; returns (N, F) coefficients."""
    rows = [alpha1]
    for lev in range(pp.shape[0]):
        a = rows[-1]
        c = solve_gram((pp[lev], a @ sp[lev]))
        nxt = np.zeros_like(a)
        nxt[dest] = c
        rows.append(nxt)
    return np.stack(rows)


def _sample_chain(chain_idx, rng, T, basis, tfun, n_levels, L0, cfg, initial, batch, acc_args):
    acc = _BlockAccumulator(*acc_args)
    start = chain_idx * cfg.samples_per_chain
    init = _initial_grid(L0, initial, cfg)
    bare = bare_hamiltonian(T, basis)
    for stack in iter_chain(init, bare, cfg, rng, batch=batch):
        index = np.arange(start, start + len(stack))
        start += len(stack)
        for lev in range(1, n_levels + 1):
            y, rot = level_geometry(stack, lev)
            acc.add(lev - 1, index, view_moments(LatticeView(y, rotated=rot), list(basis), tfun))
    return acc


def run_flow(
    T: float,
    basis: BasisSet,
    n_iters: int,
    L0: int,
    cfg: ChainConfig,
    threads: int = 1,
    n_blocks: int = 20,
    initial: str = "up",
    batch: int = 64,
) -> FlowTable:
    """Parameter flow ``alpha^(1..n_iters)`` at temperature ``T``.

    One set of bare Metropolis chains on an ``L0 x L0`` periodic lattice
    supplies every level: level ``n`` is the ``n-1`` times decimated sample,
    evaluated on its whole (exactly periodic) lattice. Row ``n+1`` is the
    projection of the derivative of ``alpha^(n)`` on level ``n`` samples.
    Errors come from a delete-one-block jackknife over ``n_blocks``
    contiguous blocks of samples, propagated through the whole iteration.
    """
    if not T > 0:
        raise ConfigurationError(f"temperature must be positive, got {T}")
    if n_iters < 1:
        raise ConfigurationError("n_iters must be >= 1")
    # row n+1 comes from level-n samples, so the last level is never sampled
    validate_geometry(L0, range(1, max(2, n_iters)))
    alpha1 = bare_hamiltonian(T, basis)
    F = len(basis)
    if n_iters == 1:
        return FlowTable(T, basis, [alpha1], np.zeros((1, F)))

    target = build_target_basis(basis)
    dest = np.array([basis.index(d) for d in target.destinations])
    n_levels = n_iters - 1
    total = cfg.n_chains * cfg.samples_per_chain
    n_blocks = max(2, min(n_blocks, total))
    acc_args = (n_levels, n_blocks, F, len(target), total)
    jobs = [
        (i, rng, T, basis, target.functions, n_levels, L0, cfg, initial, batch, acc_args)
        for i, rng in enumerate(cfg.chain_rngs())
    ]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda a: _sample_chain(*a), jobs))
    else:
        parts = [_sample_chain(*a) for a in jobs]
    acc = parts[0]
    for p in parts[1:]:
        acc.merge(p)

    pp_tot, sp_tot = acc.pp.sum(axis=1), acc.sp.sum(axis=1)
    rows = _flow_from_means(alpha1.values, pp_tot / total, sp_tot / total, dest)

    # delete-one-block jackknife
    reps = []
    for b in range(n_blocks):
        n_b = total - acc.count[b]
        reps.append(
            _flow_from_means(alpha1.values, (pp_tot - acc.pp[:, b]) / n_b, (sp_tot - acc.sp[:, b]) / n_b, dest)
        )
    reps = np.stack(reps)
    jk = np.sqrt((n_blocks - 1) / n_blocks * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0))
    m2_reps = reps @ _m2_weights(basis)
    m2_se = np.sqrt((n_blocks - 1) / n_blocks * ((m2_reps - m2_reps.mean(axis=0)) ** 2).sum(axis=0))
    alphas = [alpha1] + [CoefficientVector(basis, r) for r in rows[1:]]
    return FlowTable(T, basis, alphas, jk, m2_se, total)


GROWING, DECAYING, FLAT = "Growing", "Decaying", "Flat"


def classify_trajectory(m2: np.ndarray, m2_stderr: np.ndarray, baseline: int = 1) -> str:
    """Compare each of the last two ``M2`` values with the one at index ``baseline``.

    The bare row is not used as reference by default: its ``M2 = 2/T``
    lives in the unrenormalized representation and is not comparable to
    the renormalized rows. Growing (Decaying) needs both final values above
    (below) the reference by more than twice the combined error.
    """
    m2 = np.asarray(m2, float)
    se = np.asarray(m2_stderr, float)
    if len(m2) < baseline + 3:
        raise ConfigurationError(f"need at least {baseline + 3} iterations to classify a trajectory")
    ref, ref_se = m2[baseline], se[baseline]
    diffs = m2[-2:] - ref
    margin = 2.0 * np.sqrt(se[-2:] ** 2 + ref_se**2)
    if np.all(diffs > margin):
        return GROWING
    if np.all(diffs < -margin):
        return DECAYING
    return FLAT


@dataclass
class TcScanResult:
    temperatures: list[float]
    tables: list[FlowTable]
    classes: list[str]
    bracket: tuple[float, float] | None

    @property
    def midpoint(self) -> float | None:
        return None if self.bracket is None else 0.5 * (self.bracket[0] + self.bracket[1])

    def to_csv(self, path):
        n_it = len(self.tables[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "class", *(f"M2_{n + 1}" for n in range(n_it)), *(f"se_M2_{n + 1}" for n in range(n_it))])
            for T, tab, cls in zip(self.temperatures, self.tables, self.classes):
                w.writerow([repr(float(T)), cls, *map(lambda v: repr(float(v)), tab.m2), *map(lambda v: repr(float(v)), tab.m2_stderr)])

    def bracket_record(self) -> dict:
        return {
            "bracket": None if self.bracket is None else [float(self.bracket[0]), float(self.bracket[1])],
            "midpoint": self.midpoint,
            "classes": dict(zip((repr(float(t)) for t in self.temperatures), self.classes)),
        }


def find_bracket(temperatures: Sequence[float], classes: Sequence[str]) -> tuple[float, float] | None:
    """Last Growing temperature and the first Decaying one above it."""
    grow = [i for i, c in enumerate(classes) if c == GROWING]
    if not grow:
        return None
    i = grow[-1]
    for j in range(i + 1, len(classes)):
        if classes[j] == DECAYING:
            return (float(temperatures[i]), float(temperatures[j]))
    return None


def tc_scan(
    T_list: Sequence[float],
    basis: BasisSet,
    n_iters: int,
    L0: int,
    cfg: ChainConfig,
    threads: int = 1,
) -> TcScanResult:
    """Flow at every temperature and bracket ``T_c`` by the growth of ``M2``.

    Temperatures run one after another with the same seed; ``threads`` is
    passed to each flow. An empty bracket (no Growing to Decaying change)
    issues a warning and is not an error.
    """
    T_list = [float(t) for t in T_list]
    if not T_list:
        raise ConfigurationError("temperature list is empty")
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ConfigurationError("temperature list must be strictly ascending")
    if n_iters < 4:
        raise ConfigurationError("n_iters must be >= 4 to classify M2 trajectories")
    validate_geometry(L0, range(1, n_iters))
    tables, classes = [], []
    for T in T_list:
        tab = run_flow(T, basis, n_iters, L0, cfg, threads=threads)
        tables.append(tab)
        classes.append(classify_trajectory(tab.m2, tab.m2_stderr))
        log.info("T=%.4f M2=%s -> %s", T, np.round(tab.m2, 4).tolist(), classes[-1])
    bracket = find_bracket(T_list, classes)
    if bracket is None:
        warnings.warn("no Growing to Decaying change across the scanned temperatures; bracket is empty")
    return TcScanResult(T_list, tables, classes, bracket)
