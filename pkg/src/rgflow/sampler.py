"""Metropolis sampling, decimated level streams and error estimates."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from ._kernels import HamiltonianProgram
from .basis import BasisFunction, CoefficientVector, LatticeView, Quadratic, BasisSet
from .errors import ConfigurationError, LatticeError
from .lattice import Boundary, SpinGrid, extract_level, interior_mask, level_geometry

__all__ = [
    "ChainConfig",
    "Estimate",
    "binning_analysis",
    "metropolis_run",
    "iter_chain",
    "MetropolisResult",
    "LevelStream",
    "swendsen_ensemble",
    "estimate_inner_products",
    "acceptance_probability",
    "dump_stream",
    "load_stream",
]

log = logging.getLogger(__name__)

# uniforms generated per kernel call, bounds memory of a chunk
_CHUNK_DRAWS = 1 << 22


@dataclass(frozen=True)
class ChainConfig:
    seed: int = 0
    burn_in_sweeps: int = 1000
    measure_sweeps: int = 10000
    thinning: int = 1
    n_chains: int = 1

    def __post_init__(self):
        for name in ("burn_in_sweeps", "measure_sweeps", "thinning", "n_chains"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")

    @property
    def samples_per_chain(self) -> int:
        return self.measure_sweeps // self.thinning

    def chain_rngs(self) -> list[np.random.Generator]:
        children = np.random.SeedSequence(self.seed).spawn(self.n_chains)
        return [np.random.Generator(np.random.PCG64(c)) for c in children]


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_samples: int
    converged: bool = True

    def __format__(self, spec):
        spec = spec or ".4g"
        return f"{self.mean:{spec}} +/- {self.stderr:{spec}}"


def binning_analysis(series, min_bins: int = 32, axis: int = 0):
    """Mean and binning standard error along ``axis``.

    Bins are doubled until fewer than ``min_bins`` remain; the reported error
    is the largest over the levels visited. ``converged`` is true when the
    last two levels agree to 10 percent, i.e. the curve has flattened.

    Returns ``(mean, stderr, converged)``; arrays if ``series`` has more than
    one dimension.
    """
    x = np.moveaxis(np.asarray(series, dtype=float), axis, 0)
    n = x.shape[0]
    if n < 2:
        raise ConfigurationError("need at least 2 samples for an error estimate")
    mean = x.mean(axis=0)
    errs = []
    b = x
    while True:
        errs.append(b.std(axis=0, ddof=1) / np.sqrt(b.shape[0]))
        if b.shape[0] // 2 < min_bins:
            break
        m = b.shape[0] // 2
        b = 0.5 * (b[0 : 2 * m : 2] + b[1 : 2 * m : 2])
    errs = np.array(errs)
    stderr = errs.max(axis=0)
    if len(errs) >= 2:
        last, prev = errs[-1], errs[-2]
        converged = np.abs(last - prev) <= 0.1 * np.maximum(np.abs(prev), 1e-300) + 1e-15
    else:
        converged = np.zeros_like(mean, dtype=bool)
    if np.ndim(mean) == 0:
        return float(mean), float(stderr), bool(converged)
    return mean, stderr, converged


def _estimate(series) -> Estimate:
    m, s, c = binning_analysis(series)
    return Estimate(m, s, len(series), c)


def pooled_estimate(chains: Sequence[np.ndarray]) -> Estimate:
    """Pool per-chain series: overall mean, independent-chain error combination."""
    n = np.array([len(c) for c in chains], dtype=float)
    N = n.sum()
    parts = [binning_analysis(c) for c in chains]
    mean = float(np.sum([len(c) * c.mean() for c in chains]) / N)
    var = sum((ni / N) ** 2 * p[1] ** 2 for ni, p in zip(n, parts))
    return Estimate(mean, float(np.sqrt(var)), int(N), all(p[2] for p in parts))


def acceptance_probability(delta_k: float) -> float:
    """Metropolis acceptance for a move changing ``K`` by ``delta_k`` under weight ``exp(K)``."""
    return float(min(1.0, np.exp(delta_k)))


def _program_for(initial: SpinGrid, alpha: CoefficientVector) -> HamiltonianProgram:
    return HamiltonianProgram.build(alpha, initial.L, initial.boundary)


def iter_chain(
    initial: SpinGrid,
    alpha: CoefficientVector,
    cfg: ChainConfig,
    rng: np.random.Generator,
    batch: int = 256,
) -> Iterator[np.ndarray]:
    """Yield stacks ``(<=batch, L, L)`` of thinned post-burn-in configurations."""
    prog = _program_for(initial, alpha)
    flat = prog.embed(initial.spins)
    nf = prog.flippable.shape[0]
    if nf == 0:
        raise LatticeError("no flippable sites")
    per_call = max(1, _CHUNK_DRAWS // nf)
    done = 0
    while done < cfg.burn_in_sweeps:
        n = min(per_call, cfg.burn_in_sweeps - done)
        prog.sweeps(flat, rng.random((n, nf)), record=False)
        done += n
    thin = cfg.thinning
    per_call = max(thin, (per_call // thin) * thin)
    per_call = min(per_call, batch * thin)
    total = cfg.samples_per_chain * thin
    done = 0
    while done < total:
        n = min(per_call, total - done)
        out, _ = prog.sweeps(flat, rng.random((n, nf)), thin=thin)
        done += n
        yield prog.unembed(out).copy()


@dataclass
class MetropolisResult:
    samples: np.ndarray  # (n_chains * S, L, L) int8, chains concatenated
    estimates: dict[str, Estimate]
    chain_lengths: tuple[int, ...]
    boundary: Boundary

    def grids(self) -> list[SpinGrid]:
        return [SpinGrid(s, self.boundary) for s in self.samples]


def magnetization(samples: np.ndarray, boundary=Boundary.PERIODIC) -> np.ndarray:
    """Per-configuration mean spin over the flippable sites."""
    s = np.asarray(samples, dtype=float)
    if Boundary(boundary) is Boundary.FIXED_PLUS_ONE:
        return s[..., interior_mask(s.shape[-1])].mean(axis=-1)
    return s.reshape(s.shape[:-2] + (-1,)).mean(axis=-1)


def basis_observable(f: BasisFunction) -> Callable[[np.ndarray], np.ndarray]:
    def obs(samples):
        return np.atleast_1d(LatticeView(samples).evaluate(f))

    obs.__name__ = f.name
    return obs


def _run_one(initial, alpha, cfg, rng, observables):
    stacks = []
    for stack in iter_chain(initial, alpha, cfg, rng):
        stacks.append(stack)
    samples = np.concatenate(stacks)
    obs = {name: np.asarray(fn(samples), dtype=float) for name, fn in observables.items()}
    return samples, obs


def metropolis_run(
    initial: SpinGrid,
    alpha: CoefficientVector,
    cfg: ChainConfig,
    observables: Mapping[str, Callable[[np.ndarray], np.ndarray]] | None = None,
    threads: int = 1,
) -> MetropolisResult:
    """Single-site Metropolis under weight ``exp(+K)``.

    Sweeps visit every flippable site once in raster order. Each of the
    ``cfg.n_chains`` chains starts from ``initial`` and owns a generator
    spawned from ``cfg.seed``, so results do not depend on ``threads``.
    ``observables`` map names to functions of a sample stack; the mean spin
    ``"m"`` is always included.
    """
    if initial.L < 2:
        raise LatticeError("lattice too small")
    obs = {"m": lambda s: magnetization(s, initial.boundary)}
    obs.update(observables or {})
    rngs = cfg.chain_rngs()
    jobs = [(initial, alpha, cfg, rng, obs) for rng in rngs]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda a: _run_one(*a), jobs))
    else:
        results = [_run_one(*a) for a in jobs]
    samples = np.concatenate([r[0] for r in results])
    estimates = {name: pooled_estimate([r[1][name] for r in results]) for name in obs}
    return MetropolisResult(
        samples, estimates, tuple(len(r[0]) for r in results), initial.boundary
    )


@dataclass(eq=False)
class LevelStream:
    """Configurations of the ``level``-times decimated measure.

    ``grids`` holds the square windows of side ``L0 / 2**(level-1)``.
    ``source`` (when present) keeps the level-1 configurations the windows
    were cut from, index-aligned; estimators then work on the full decimated
    lattice instead of the window.
    """

    level: int
    grids: np.ndarray
    source: np.ndarray | None = None
    seed: int | None = None
    chain_lengths: tuple[int, ...] = field(default=())

    def __post_init__(self):
        g = np.asarray(self.grids)
        if g.ndim != 3 or g.shape[1] != g.shape[2]:
            raise LatticeError("grids must be a stack (S, M, M)")
        self.grids = g
        if self.source is not None and len(self.source) != len(g):
            raise LatticeError("source and grids are not index-aligned")
        if not self.chain_lengths:
            self.chain_lengths = (len(g),)

    def __len__(self):
        return len(self.grids)

    @property
    def size(self) -> int:
        return self.grids.shape[-1]

    @classmethod
    def from_grids(cls, grids: Sequence[SpinGrid] | np.ndarray, level: int = 1) -> "LevelStream":
        arr = np.stack([g.spins if isinstance(g, SpinGrid) else np.asarray(g) for g in grids])
        return cls(level, arr.astype(np.int8))

    def views(self, batch: int = 128) -> Iterator[LatticeView]:
        """Lattice views over batches of samples.

        With a source the view covers the whole level lattice (exactly
        periodic); otherwise the window grids are treated as periodic.
        """
        for start in range(0, len(self), batch):
            if self.source is not None:
                y, rot = level_geometry(self.source[start : start + batch], self.level)
                yield LatticeView(y, rotated=rot)
            else:
                yield LatticeView(self.grids[start : start + batch])

    def basis_values(self, basis: BasisSet | Sequence[BasisFunction], batch: int = 256) -> np.ndarray:
        """Array (S, F) of basis function values on every sample."""
        return np.concatenate([v.evaluate_many(basis) for v in self.views(batch)])


def bare_alpha(T: float) -> CoefficientVector:
    from .basis import bare_hamiltonian

    return bare_hamiltonian(T, BasisSet("bare", (Quadratic(2),)))


def validate_levels(L0: int, n_levels: int):
    if n_levels < 1:
        raise ConfigurationError("n_levels must be >= 1")
    f = 1 << (n_levels - 1)
    if L0 % f or L0 // f < 2:
        raise LatticeError(f"L0={L0} is not divisible by 2**{n_levels - 1}={f}")
    for n in range(1, n_levels + 1):
        level_geometry(np.zeros((L0, L0), dtype=np.int8), n)


def validate_geometry(L0: int, levels, min_side: int = 4):
    """Check that every level in ``levels`` exists as a whole torus of ``L0``.

    This is the condition for the streaming code paths, which evaluate each
    level on its complete lattice via ``level_geometry``. It is weaker than
    :func:`validate_levels`, which also needs the square windows of
    ``extract_level``.
    """
    for n in levels:
        if n < 1:
            raise ConfigurationError(f"levels start at 1, got {n}")
        y, _ = level_geometry(np.zeros((L0, L0), dtype=np.int8), n)
        if y.shape[-1] < min_side:
            raise LatticeError(f"L0={L0}: level {n} lattice is {y.shape[-1]} wide, needs at least {min_side}")


def swendsen_ensemble(
    T: float,
    L0: int,
    n_levels: int,
    cfg: ChainConfig,
    initial: str = "up",
    threads: int = 1,
) -> list[LevelStream]:
    """Bare Metropolis samples and their successive decimations.

    Level ``n`` is produced from each level-1 sample by deterministic
    decimation, so all streams share sample indices.
    """
    validate_levels(L0, n_levels)
    init = _initial_grid(L0, initial, cfg)
    res = metropolis_run(init, bare_alpha(T), cfg, threads=threads)
    src = res.samples
    out = [LevelStream(1, src, src, cfg.seed, res.chain_lengths)]
    for n in range(2, n_levels + 1):
        out.append(LevelStream(n, extract_level(src, n), src, cfg.seed, res.chain_lengths))
    return out


def _initial_grid(L: int, initial: str, cfg: ChainConfig, boundary=Boundary.PERIODIC) -> SpinGrid:
    if initial == "up":
        return SpinGrid.uniform(L, 1, boundary)
    if initial == "random":
        return SpinGrid.random(L, np.random.default_rng(cfg.seed), boundary)
    raise ConfigurationError(f"unknown initial state {initial!r}")


def estimate_inner_products(
    stream: LevelStream,
    targets: Sequence[BasisFunction],
    alpha: CoefficientVector,
):
    """Sample estimate of the Gram system for projecting ``sum alpha_k phi_k'``.

    Inner products are averaged over configurations and over every even
    center of the level lattice.
    """
    from .projection import gram_system, level_moments

    if len(stream) < 2:
        raise ConfigurationError("need at least 2 samples to estimate inner products")
    mom = level_moments(stream, alpha.basis, list(targets))
    return gram_system(mom, alpha)


def dump_stream(stream: LevelStream, path) -> None:
    """Text snapshots: a JSON header line then one line of +/- per grid."""
    with open(path, "w", encoding="ascii") as fh:
        for idx, g in enumerate(stream.grids):
            head = {"level": stream.level, "index": idx, "seed": stream.seed, "size": int(g.shape[0])}
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            fh.write("".join("+" if v > 0 else "-" for v in g.reshape(-1)) + "\n")


def load_stream(path) -> LevelStream:
    grids, level, seed = [], None, None
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    for head, body in zip(lines[0::2], lines[1::2]):
        h = json.loads(head)
        level, seed, n = h["level"], h["seed"], h["size"]
        vals = np.frombuffer(body.encode("ascii"), dtype=np.uint8)
        grids.append(np.where(vals == ord("+"), 1, -1).astype(np.int8).reshape(n, n))
    return LevelStream(level, np.stack(grids), seed=seed)
