"""Static figures written next to the CSV outputs (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import TC_EXACT, MagnetizationCurve, onsager_magnetization  # noqa: E402
from .flow import FlowTable, TcScanResult  # noqa: E402


def _save(fig, path):
    path = Path(path)
    # fixed metadata keeps SVG output stable between runs
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_flow(table: FlowTable, path):
    """Coefficient trajectories, one line per basis function."""
    fig, ax = plt.subplots(figsize=(6, 4))
    it = np.arange(1, len(table) + 1)
    vals = table.values
    for i, name in enumerate(table.basis.names):
        ax.errorbar(it, vals[:, i], yerr=table.stderr[:, i], marker="o", ms=3, capsize=2, label=name)
    ax.set_xlabel("iteration n")
    ax.set_ylabel(r"$\alpha_k^{(n)}$")
    ax.set_title(f"parameter flow, T = {table.T:g}")
    ax.axhline(0, color="0.7", lw=0.5)
    ax.legend(ncol=2, fontsize=7)
    return _save(fig, path)


def plot_m2(scan: TcScanResult | Sequence[FlowTable], path):
    """``M2`` against iteration for every temperature of a scan."""
    tables = scan.tables if isinstance(scan, TcScanResult) else list(scan)
    fig, ax = plt.subplots(figsize=(6, 4))
    for tab in tables:
        it = np.arange(1, len(tab) + 1)
        ax.errorbar(it, tab.m2, yerr=tab.m2_stderr, marker="o", ms=3, capsize=2, label=f"T={tab.T:g}")
    ax.set_xlabel("iteration n")
    ax.set_ylabel(r"$M_2^{(n)}$")
    if isinstance(scan, TcScanResult) and scan.bracket is not None:
        ax.set_title(f"bracket [{scan.bracket[0]:g}, {scan.bracket[1]:g}]")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_magnetization(curves: Sequence[MagnetizationCurve], path):
    """Measured ``m(T)`` with the exact infinite-lattice curve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    Ts = [p.T for c in curves for p in c.points if p.T is not None]
    if Ts:
        grid = np.linspace(min(Ts) - 0.05, max(max(Ts), TC_EXACT) + 0.05, 300)
        ax.plot(grid, [onsager_magnetization(t) for t in grid], "k-", lw=1, label="Onsager")
    for c in curves:
        pts = [p for p in c.points if p.T is not None]
        ax.errorbar(
            [p.T for p in pts], [p.m for p in pts], yerr=[p.stderr for p in pts],
            marker="o", ms=3, capsize=2, ls="none", label=f"{c.source}, {c.L}x{c.L}",
        )
    ax.set_xlabel("T")
    ax.set_ylabel("m")
    ax.legend(fontsize=7)
    return _save(fig, path)
