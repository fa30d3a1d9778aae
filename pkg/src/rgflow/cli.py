"""Command line entry point: ``rgflow <subcommand> [options]``.

Options may also come from a JSON file given with ``--config``; flags given
on the command line win over file values, file values win over defaults.
Exit codes: 0 success, 2 usage, 3 validation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import TC_EXACT, exponent_run, magnetization_curve
from .basis import bare_hamiltonian, parse_basis
from .errors import ConfigurationError, NumericalError, RGFlowError
from .flow import FlowTable, run_flow, tc_scan
from .io import Manifest, write_json
from .oracle import fixtures
from .sampler import ChainConfig, validate_geometry

log = logging.getLogger("rgflow")

EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 2, 3, 4

COMMON_DEFAULTS = {
    "out": "rgflow-out",
    "seed": 0,
    "threads": 1,
    "burn_in": 1000,
    "sweeps": 10000,
    "thinning": 1,
    "chains": 1,
    "basis": "full10",
    "plots": True,
}
DEFAULTS = {
    "flow": {"T": None, "iters": 5, "L0": 128},
    "tc-scan": {"T_list": "2.10,2.15,2.20,2.25,2.30,2.35,2.40", "iters": 7, "L0": 64},
    "magnetization": {"source": ["bare"], "T_list": "2.0,2.1,2.2", "L": 20},
    "exponents": {"T": 2.27, "levels": "2,3", "L0": 64, "boot": 200},
    "oracle": {"T": 2.27, "L": 4, "emit_fixtures": False},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, cmd: str):
    d = {**COMMON_DEFAULTS, **DEFAULTS[cmd]}
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="JSON file with option values (flags override it)")
    g.add_argument("--out", help=f"output directory (default: {d['out']})")
    g.add_argument("--seed", type=int, help=f"master seed (default: {d['seed']})")
    g.add_argument("--threads", type=int, help=f"worker threads across chains (default: {d['threads']})")
    g.add_argument("--basis", help=f"preset (small6, full10) or comma list like Q2,Q3,X4_2 (default: {d['basis']})")
    g.add_argument("--burn-in", dest="burn_in", type=int, help=f"burn-in sweeps per chain (default: {d['burn_in']})")
    g.add_argument("--sweeps", type=int, help=f"measured sweeps per chain (default: {d['sweeps']})")
    g.add_argument("--thinning", type=int, help=f"sweeps between stored samples (default: {d['thinning']})")
    g.add_argument("--chains", type=int, help=f"independent chains (default: {d['chains']})")
    g.add_argument("--no-plots", dest="plots", action="store_false", default=argparse.SUPPRESS,
                   help="skip the SVG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rgflow", description=__doc__.splitlines()[0], argument_default=argparse.SUPPRESS)
    ap.add_argument("--version", action="version", version=f"rgflow {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("flow", help="parameter flow at one temperature", argument_default=argparse.SUPPRESS)
    p.add_argument("--T", type=float, help="temperature (required)")
    p.add_argument("--iters", type=int, help="number of table rows incl. the bare one (default: 5)")
    p.add_argument("--L0", type=int, help="bare lattice side (default: 128)")
    _common(p, "flow")

    p = sub.add_parser("tc-scan", help="bracket T_c from M2 growth", argument_default=argparse.SUPPRESS)
    p.add_argument("--T-list", dest="T_list", help=f"ascending comma list (default: {DEFAULTS['tc-scan']['T_list']})")
    p.add_argument("--iters", type=int, help="iterations per temperature (default: 7)")
    p.add_argument("--L0", type=int, help="bare lattice side (default: 64)")
    _common(p, "tc-scan")

    p = sub.add_parser("magnetization", help="m(T) with a +1 boundary", argument_default=argparse.SUPPRESS)
    p.add_argument("--source", action="append",
                   help="'bare' or FLOW_CSV:rowN, repeatable (default: bare)")
    p.add_argument("--T-list", dest="T_list", help="temperatures for the bare source (default: 2.0,2.1,2.2)")
    p.add_argument("--L", type=int, help="lattice side including the boundary ring (default: 20)")
    _common(p, "magnetization")

    p = sub.add_parser("exponents", help="thermal exponent from the chain rule", argument_default=argparse.SUPPRESS)
    p.add_argument("--T", type=float, help="temperature (default: 2.27)")
    p.add_argument("--levels", help="successive level pair (default: 2,3)")
    p.add_argument("--L0", type=int, help="bare lattice side (default: 64)")
    p.add_argument("--boot", type=int, help="bootstrap replicas (default: 200)")
    _common(p, "exponents")

    p = sub.add_parser("oracle", help="exact enumeration fixtures", argument_default=argparse.SUPPRESS)
    p.add_argument("--T", type=float, help="temperature (default: 2.27)")
    p.add_argument("--L", type=int, help="periodic lattice side, at most 4 (default: 4)")
    p.add_argument("--emit-fixtures", dest="emit_fixtures", action="store_true", help="write fixtures.json")
    _common(p, "oracle")
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cmd = args.command
    cfg = {**COMMON_DEFAULTS, **DEFAULTS[cmd]}
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    path = getattr(args, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = set(data) - set(cfg)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(data)
    cfg.update(flags)
    cfg["command"] = cmd
    return cfg


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"not a comma separated number list: {text!r}") from None


def _chain(cfg) -> ChainConfig:
    return ChainConfig(
        seed=int(cfg["seed"]),
        burn_in_sweeps=int(cfg["burn_in"]),
        measure_sweeps=int(cfg["sweeps"]),
        thinning=int(cfg["thinning"]),
        n_chains=int(cfg["chains"]),
    )


def _plot(cfg, fn, *a):
    if not cfg["plots"]:
        return []
    from . import plotting

    return [getattr(plotting, fn)(*a)]


def cmd_flow(cfg) -> list[Path]:
    if cfg["T"] is None:
        raise _UsageError("flow needs --T")
    basis, chain = parse_basis(cfg["basis"]), _chain(cfg)
    validate_geometry(int(cfg["L0"]), range(1, max(2, int(cfg["iters"]))))
    out = Path(cfg["out"])
    man = Manifest(out, "flow", cfg)
    tab = run_flow(float(cfg["T"]), basis, int(cfg["iters"]), int(cfg["L0"]), chain, threads=int(cfg["threads"]))
    tab.to_csv(out / "flow.csv")
    files = [out / "flow.csv"] + _plot(cfg, "plot_flow", tab, out / "flow.svg")
    man.finish(files, {"alpha": tab.stderr.tolist(), "M2": tab.m2_stderr.tolist()})
    return files


def cmd_tc_scan(cfg) -> list[Path]:
    Ts = _floats(cfg["T_list"])
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ConfigurationError("temperature list must be strictly ascending")
    if int(cfg["iters"]) < 4:
        raise ConfigurationError("tc-scan needs --iters >= 4")
    basis, chain = parse_basis(cfg["basis"]), _chain(cfg)
    validate_geometry(int(cfg["L0"]), range(1, max(2, int(cfg["iters"]))))
    out = Path(cfg["out"])
    man = Manifest(out, "tc-scan", cfg)
    res = tc_scan(Ts, basis, int(cfg["iters"]), int(cfg["L0"]), chain, threads=int(cfg["threads"]))
    res.to_csv(out / "scan.csv")
    rec = res.bracket_record()
    rec["exact_Tc"] = TC_EXACT
    if res.midpoint is not None:
        rec["relative_error"] = abs(res.midpoint - TC_EXACT) / TC_EXACT
    write_json(out / "bracket.json", rec)
    files = [out / "scan.csv", out / "bracket.json"] + _plot(cfg, "plot_m2", res, out / "m2.svg")
    man.finish(files, {f"M2@{t!r}": tab.m2_stderr.tolist() for t, tab in zip(Ts, res.tables)})
    return files


def _parse_source(text):
    """``bare`` or ``path:rowN`` -> (label, path or None, row)."""
    if text == "bare":
        return "bare", None, None
    path, sep, row = str(text).rpartition(":")
    if not sep or not row.startswith("row"):
        raise ConfigurationError(f"source must be 'bare' or FLOW_CSV:rowN, got {text!r}")
    try:
        n = int(row[3:])
    except ValueError:
        raise ConfigurationError(f"bad row selector {row!r}") from None
    return f"H({n})", path, n


def cmd_magnetization(cfg) -> list[Path]:
    sources = cfg["source"] if isinstance(cfg["source"], list) else [cfg["source"]]
    chain, L = _chain(cfg), int(cfg["L"])
    if L < 3:
        raise ConfigurationError("L must be at least 3 to leave interior spins")
    bare_pts, renorm = [], {}
    for s in sources:
        label, path, n = _parse_source(s)
        if path is None:
            basis = parse_basis(cfg["basis"])
            bare_pts = [(T, bare_hamiltonian(T, basis)) for T in _floats(cfg["T_list"])]
        else:
            tab = FlowTable.from_csv(path)
            renorm.setdefault(label, []).append((tab.T, tab.row(n)))
    out = Path(cfg["out"])
    man = Manifest(out, "magnetization", cfg)
    curves = []
    if bare_pts:
        curves.append(magnetization_curve(bare_pts, L, chain, "bare", threads=int(cfg["threads"])))
    for label, pts in renorm.items():
        curves.append(magnetization_curve(sorted(pts, key=lambda p: p[0]), L, chain, label, threads=int(cfg["threads"])))
    path = out / "magnetization.csv"
    with open(path, "w", newline="") as fh:
        fh.write("T,m,stderr,onsager,L,source\n")
    for c in curves:
        tmp = out / ".curve.csv"
        c.to_csv(tmp)
        with open(path, "a", newline="") as fh:
            fh.writelines(tmp.read_text().splitlines(keepends=True)[1:])
        tmp.unlink()
    files = [path] + _plot(cfg, "plot_magnetization", curves, out / "magnetization.svg")
    man.finish(files, {f"{c.source}@{p.T!r}": p.stderr for c in curves for p in c.points})
    return files


def cmd_exponents(cfg) -> list[Path]:
    try:
        levels = tuple(int(v) for v in str(cfg["levels"]).split(","))
    except ValueError:
        raise ConfigurationError(f"levels must look like 2,3, got {cfg['levels']!r}") from None
    if len(levels) != 2 or levels[1] != levels[0] + 1 or levels[0] < 1:
        raise ConfigurationError(f"levels must be two successive levels, got {cfg['levels']!r}")
    basis, chain = parse_basis(cfg["basis"]), _chain(cfg)
    validate_geometry(int(cfg["L0"]), levels)
    out = Path(cfg["out"])
    man = Manifest(out, "exponents", cfg)
    res = exponent_run(float(cfg["T"]), int(cfg["L0"]), levels, basis, chain, n_boot=int(cfg["boot"]))
    rec = res.to_dict()
    rec.update({"T": float(cfg["T"]), "levels": list(levels), "L0": int(cfg["L0"])})
    write_json(out / "exponents.json", rec)
    man.finish([out / "exponents.json"], {"nu": res.nu_stderr, "lambda_T": res.lambda_T_stderr})
    return [out / "exponents.json"]


def cmd_oracle(cfg) -> list[Path]:
    basis = parse_basis(cfg["basis"])
    L, T = int(cfg["L"]), float(cfg["T"])
    if not 2 <= L <= 4:
        raise ConfigurationError("oracle enumeration needs 2 <= L <= 4")
    if L % 2:
        raise ConfigurationError("oracle needs an even L so the even sublattice decimates")
    out = Path(cfg["out"])
    man = Manifest(out, "oracle", cfg)
    fx = fixtures(L, T, basis)
    files = []
    if cfg["emit_fixtures"]:
        write_json(out / "fixtures.json", fx)
        files.append(out / "fixtures.json")
    else:
        print(json.dumps({"log_Z": fx["log_Z"], "marginal_fit_residual": fx["marginal_fit_residual"]}))
    man.finish(files)
    return files


COMMANDS = {
    "flow": cmd_flow,
    "tc-scan": cmd_tc_scan,
    "magnetization": cmd_magnetization,
    "exponents": cmd_exponents,
    "oracle": cmd_oracle,
}


class _UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(2, args.verbose)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    warnings.simplefilter("always")
    try:
        cfg = resolve_config(args)
        files = COMMANDS[args.command](cfg)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rgflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"rgflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RGFlowError, ValueError) as exc:
        print(f"rgflow: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FloatingPointError as exc:
        print(f"rgflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
