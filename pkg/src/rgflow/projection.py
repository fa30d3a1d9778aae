"""One renormalization step by projecting Hamiltonian derivatives.

At an even center ``I`` the derivative ``f = sum_k alpha_k dphi_k/dx_I`` is
projected onto derivatives of functions of the kept spins only. Those target
functions are chosen so that after relabelling they are exactly the basis
functions again, hence the projection coefficients are the new ``alpha``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .basis import BasisFunction, BasisSet, CoefficientVector, LatticeView, preimage_index
from .errors import ConfigurationError, NumericalError
from .sampler import LevelStream, binning_analysis

__all__ = [
    "TargetBasis",
    "build_target_basis",
    "Moments",
    "level_moments",
    "GramSystem",
    "gram_system",
    "solve_gram",
    "ridge_for",
    "project",
    "renormalize_step",
]

RIDGE_ABS = 1e-10
RIDGE_REL = 1e-8


@dataclass(frozen=True)
class TargetBasis:
    basis: BasisSet
    functions: tuple[BasisFunction, ...]  # functions of the kept spins, current lattice
    destinations: tuple[BasisFunction, ...]  # the same functions after relabelling

    def __len__(self):
        return len(self.functions)

    @property
    def names(self):
        return [f.name for f in self.functions]


def build_target_basis(basis: BasisSet) -> TargetBasis:
    """Preimages of every basis function under decimation + relabelling."""
    ext = []
    for f in basis:
        ext.append(BasisFunction(f.kind, tuple(preimage_index(k) for k in f.shells)))
    return TargetBasis(basis, tuple(ext), tuple(basis.functions))


@dataclass
class Moments:
    """Per-sample center averages of derivative products.

    ``psi_psi[s, t, u]`` averages ``psi_t psi_u``, ``src_psi[s, k, t]``
    averages ``phi_k' psi_t`` and ``src_src[s, k, l]`` averages
    ``phi_k' phi_l'`` over the even centers of sample ``s``. With ``weights``
    the rows are exact states and expectations are weighted sums.
    """

    psi_psi: np.ndarray
    src_psi: np.ndarray
    src_src: np.ndarray
    weights: np.ndarray | None = None

    def __len__(self):
        return self.psi_psi.shape[0]

    def expectation(self, a: np.ndarray) -> np.ndarray:
        if self.weights is None:
            return a.mean(axis=0)
        return np.tensordot(self.weights, a, axes=1)

    def subset(self, idx) -> "Moments":
        w = None if self.weights is None else self.weights[idx]
        return Moments(self.psi_psi[idx], self.src_psi[idx], self.src_src[idx], w)

    @classmethod
    def concat(cls, parts: Sequence["Moments"]) -> "Moments":
        w = None
        if parts[0].weights is not None:
            w = np.concatenate([p.weights for p in parts])
        return cls(
            np.concatenate([p.psi_psi for p in parts]),
            np.concatenate([p.src_psi for p in parts]),
            np.concatenate([p.src_src for p in parts]),
            w,
        )


def view_moments(view: LatticeView, basis: Sequence[BasisFunction], targets: Sequence[BasisFunction]) -> Moments:
    basis, targets = list(basis), list(targets)
    union = list(dict.fromkeys(basis + targets))
    g = view.center_values([view.derivative(f) for f in union])
    gram = np.matmul(g, g.transpose(0, 2, 1)) / g.shape[-1]
    si = [union.index(f) for f in basis]
    ti = [union.index(f) for f in targets]
    return Moments(
        gram[:, ti][:, :, ti],
        gram[:, si][:, :, ti],
        gram[:, si][:, :, si],
    )


def level_moments(
    stream: LevelStream | Iterable[LatticeView],
    basis: BasisSet | Sequence[BasisFunction],
    targets: TargetBasis | Sequence[BasisFunction] | None = None,
) -> Moments:
    if targets is None:
        targets = build_target_basis(basis)
    tfun = targets.functions if isinstance(targets, TargetBasis) else tuple(targets)
    views = stream.views() if isinstance(stream, LevelStream) else stream
    return Moments.concat([view_moments(v, list(basis), tfun) for v in views])


@dataclass
class GramSystem:
    phi: np.ndarray
    r: np.ndarray
    phi_stderr: np.ndarray
    r_stderr: np.ndarray
    n_samples: int
    ridge: float | None = None

    def to_csv(self, path, names: Sequence[str] | None = None):
        n = len(self.r)
        names = list(names) if names is not None else [str(i) for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["entry", "row", "col", "value", "stderr"])
            for i in range(n):
                for j in range(n):
                    w.writerow(["phi", names[i], names[j], repr(float(self.phi[i, j])), repr(float(self.phi_stderr[i, j]))])
            for i in range(n):
                w.writerow(["r", names[i], "", repr(float(self.r[i])), repr(float(self.r_stderr[i]))])


def gram_system(moments: Moments, alpha: CoefficientVector | np.ndarray, ridge: float | None = None) -> GramSystem:
    a = alpha.values if isinstance(alpha, CoefficientVector) else np.asarray(alpha, float)
    r_s = np.einsum("bkt,k->bt", moments.src_psi, a)
    if moments.weights is not None:
        phi = moments.expectation(moments.psi_psi)
        r = moments.expectation(r_s)
        return GramSystem(0.5 * (phi + phi.T), r, np.zeros_like(phi), np.zeros_like(r), len(moments), ridge)
    if len(moments) < 2:
        raise ConfigurationError("need at least 2 samples to estimate inner products")
    phi, phi_se, _ = binning_analysis(moments.psi_psi)
    r, r_se, _ = binning_analysis(r_s)
    phi, phi_se = np.atleast_2d(phi), np.atleast_2d(phi_se)
    return GramSystem(phi, np.atleast_1d(r), phi_se, np.atleast_1d(r_se), len(moments), ridge)


def ridge_for(phi: np.ndarray) -> float:
    return max(RIDGE_ABS, RIDGE_REL * float(np.trace(phi)) / phi.shape[0])


def solve_gram(system: GramSystem | tuple, ridge: float | None = None) -> np.ndarray:
    """Solve ``(Phi + lam I) c = r`` by Cholesky.

    ``lam`` defaults to ``max(1e-10, 1e-8 * trace(Phi) / n)``.
    """
    if isinstance(system, GramSystem):
        phi, r = system.phi, system.r
        ridge = ridge if ridge is not None else system.ridge
    else:
        phi, r = system
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(r))):
        raise NumericalError("Gram system contains non-finite entries")
    lam = ridge_for(phi) if ridge is None else ridge
    a = 0.5 * (phi + phi.T) + lam * np.eye(len(r))
    try:
        c = scipy.linalg.cho_solve(scipy.linalg.cho_factor(a), r)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(a)
        raise NumericalError(f"Gram matrix not positive definite after ridge {lam:g} (cond={cond:.3g})") from None
    if not np.all(np.isfinite(c)):
        raise NumericalError("Gram solve produced non-finite coefficients")
    return c


def project(moments: Moments, alpha: CoefficientVector, target: TargetBasis | None = None) -> CoefficientVector:
    """Renormalized coefficients from precomputed moments."""
    target = target or build_target_basis(alpha.basis)
    c = solve_gram(gram_system(moments, alpha))
    values = np.zeros(len(alpha.basis))
    for t, dest in enumerate(target.destinations):
        values[alpha.basis.index(dest)] = c[t]
    return CoefficientVector(alpha.basis, values)


def projection_residual(moments: Moments, alpha: CoefficientVector, c: np.ndarray) -> tuple[float, float]:
    """``(|f - sum c psi|^2, |f|^2)`` on the measure carried by ``moments``."""
    a = alpha.values
    ff = float(a @ moments.expectation(moments.src_src) @ a)
    r = moments.expectation(np.einsum("bkt,k->bt", moments.src_psi, a))
    phi = moments.expectation(moments.psi_psi)
    return ff - 2 * float(c @ r) + float(c @ phi @ c), ff


def renormalize_step(alpha: CoefficientVector, stream: LevelStream) -> CoefficientVector:
    """Coefficients of the next Hamiltonian from samples of the current one."""
    target = build_target_basis(alpha.basis)
    return project(level_moments(stream, alpha.basis, target), alpha, target)
