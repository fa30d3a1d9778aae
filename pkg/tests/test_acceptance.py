"""End-to-end acceptance checks.

Each test prints a single ``CRITERION n: PASS|FAIL`` verdict (also collected
into the terminal summary) and then asserts the same condition, so a red
criterion shows up both as a failed test and as a FAIL line. Tolerances are
the ones stated for each criterion; none of them is tuned to the outcome.

Runtime is about half an hour on one core, dominated by the flows at
``L0 = 64`` and ``128`` and the 1e5-sweep exponent run.
"""
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from rgflow.analysis import TC_EXACT, block_exponent_run, exponent_run, magnetization_run, onsager_magnetization
from rgflow.basis import FULL, SMALL, CoefficientVector, LatticeView, bare_hamiltonian
from rgflow.flow import run_flow, tc_scan
from rgflow.lattice import SpinGrid
from rgflow.oracle import (
    chain_decimation_coupling,
    chain_marginal,
    enumerate_lattice,
    exact_renormalize,
    fit_coefficients,
    marginal_fit,
)
from rgflow.sampler import ChainConfig, metropolis_run

pytestmark = pytest.mark.acceptance

# published reference flow at T = 2.26, second iteration, in FULL-basis order
TABLE1_ITER2 = [0.26, 0.47, 0.32, 0.04, 0.07, -0.01, -0.08, 0.04, -0.00, -0.12]
SCAN_T = [2.10, 2.15, 2.20, 2.25, 2.30, 2.35, 2.40]
MAG_T = [2.0, 2.1, 2.2]
# near T_c the flow first climbs toward the fixed-point neighbourhood (the
# reference flow peaks at iteration 5 or 6), so the scan follows seven
# iterations, the length of the reference flow
SCAN_ITERS = 7
DESK = ChainConfig(seed=2024, burn_in_sweeps=1000, measure_sweeps=10_000)

_flows: dict = {}


def verdict(n: int, ok: bool, detail: str):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def desk_flow(T: float):
    """FULL-basis flow at the desk preset, shared between the scan and magnetization checks.

    Rows 1..5 do not depend on how many further iterations are run, so a
    scan table can serve as the source of ``H^(5)``.
    """
    key = round(T, 4)
    if key not in _flows:
        _flows[key] = run_flow(T, FULL, SCAN_ITERS, 64, DESK)
    return _flows[key]


def test_criterion_1_sampler_matches_enumeration():
    t0 = time.perf_counter()
    alpha = bare_hamiltonian(2.27, FULL)
    table = enumerate_lattice(alpha, 4)
    exact = table.probabilities @ LatticeView(table.states).evaluate_many(FULL)
    cfg = ChainConfig(seed=101, burn_in_sweeps=1000, measure_sweeps=20_000)
    obs = {f.name: (lambda s, f=f: LatticeView(s).evaluate(f)) for f in FULL}
    res = metropolis_run(SpinGrid.uniform(4), alpha, cfg, observables=obs)
    z = []
    for i, f in enumerate(FULL):
        e = res.estimates[f.name]
        z.append(0.0 if e.stderr == 0 else abs(e.mean - exact[i]) / e.stderr)
        if e.stderr == 0:
            assert e.mean == pytest.approx(exact[i], abs=1e-12)
    dt = time.perf_counter() - t0
    ok = max(z) <= 3.0 and cfg.measure_sweeps >= 10_000 and dt < 60
    verdict(1, ok, f"max |MC - exact| / stderr = {max(z):.2f} over {len(FULL)} functions, {dt:.1f} s")
    assert ok


def test_criterion_2_projection_equals_marginal_fit():
    # complete span: only even-shell couplings, so the derivative is a function of the kept spins
    alpha = CoefficientVector(SMALL, [0, 0, 0.3, -0.2, 0, 0.5])
    proj = exact_renormalize(alpha, 4)
    fit, res = marginal_fit(alpha, 4)
    d_complete = float(np.max(np.abs(proj.values[1:] - fit.values[1:])))
    ok_complete = d_complete <= 1e-6 and res.residual_norm < 1e-9
    # truncated FULL basis at the bare point
    bare = bare_hamiltonian(2.27, FULL)
    proj_t = exact_renormalize(bare, 4)
    fit_t, res_t = marginal_fit(bare, 4)
    d_trunc = float(np.max(np.abs(proj_t.values[1:] - fit_t.values[1:])))
    ok_trunc = d_trunc <= res_t.residual_norm
    detail = (
        f"complete span max diff {d_complete:.2e} (tol 1e-6); "
        f"truncated FULL max diff {d_trunc:.4f} vs fit residual {res_t.residual_norm:.4f}"
    )
    verdict(2, ok_complete and ok_trunc, detail)
    assert ok_complete, detail
    assert ok_trunc, detail


def test_criterion_3_chain_decimation():
    m = chain_marginal(0.5, 3, [0, 2])
    fit = fit_coefficients(m, (m.states[:, 0] * m.states[:, 1]).astype(float)[:, None])
    K = float(fit.coefficients[0])
    closed = chain_decimation_coupling(0.5)
    ok = abs(K - closed) <= 1e-10 and abs(K - 0.2168) < 1e-4 and math.isclose(closed, math.atanh(math.tanh(0.5) ** 2))
    verdict(3, ok, f"end-to-end coupling {K:.12f}, closed form {closed:.12f}, |diff| {abs(K - closed):.1e}")
    assert ok


def test_criterion_4_reference_flow():
    tab = run_flow(2.26, FULL, 5, 128, DESK)
    row1, row2 = tab.row(1), tab.row(2)
    exact_bare = row1[FULL[1]] == 2.0 / 2.26 and np.count_nonzero(row1.values) == 1
    dev = np.abs(row2.values - np.array(TABLE1_ITER2))
    ok = exact_bare and float(dev.max()) <= 0.05
    worst = FULL.names[int(dev.argmax())]
    verdict(
        4,
        ok,
        f"iteration-2 max |alpha - table| = {dev.max():.3f} ({worst}); iteration-1 alpha_2 = 2/T exactly: {exact_bare}",
    )
    print("iteration 2:", np.round(row2.values, 3).tolist())
    print("M2:", np.round(tab.m2, 3).tolist())
    # the text quotes T = 2.27 for the same table; reported only
    alt = run_flow(2.27, FULL, 2, 64, DESK)
    print("info: T=2.27 iteration 2:", np.round(alt.row(2).values, 3).tolist())
    assert ok


def test_criterion_5_tc_bracket():
    t0 = time.perf_counter()
    res = tc_scan(SCAN_T, FULL, SCAN_ITERS, 64, DESK)
    for T, tab in zip(res.temperatures, res.tables):
        _flows[round(T, 4)] = tab
    dt = time.perf_counter() - t0
    mid = res.midpoint
    err = None if mid is None else abs(mid - TC_EXACT) / TC_EXACT
    ok = err is not None and err <= 0.03 and dt <= 1800
    verdict(5, ok, f"bracket {res.bracket}, midpoint {mid}, rel. error {err if err is None else round(err, 4)}, {dt / 60:.1f} min")
    print("classes:", dict(zip(res.temperatures, res.classes)))
    for T, tab in zip(res.temperatures, res.tables):
        print(f"M2 at T={T}:", np.round(tab.m2, 3).tolist())
    assert ok


def test_criterion_6_nu():
    cfg = ChainConfig(seed=7, burn_in_sweeps=2000, measure_sweeps=100_000)
    res = exponent_run(2.27, 64, (2, 3), FULL, cfg)
    ok = res.nu is not None and abs(res.nu - 1.0) <= 0.1
    nu_txt = "none" if res.nu is None else f"{res.nu:.3f} +/- {res.nu_stderr:.3f}"
    verdict(6, ok, f"pick-one decimation, levels 2-3, L0=64, 1e5 sweeps: nu = {nu_txt} (target 1 +/- 0.1)")
    # same estimator on 2x2 majority blocks, for information only
    maj = block_exponent_run(2.27, 64, "majority", FULL, ChainConfig(seed=7, burn_in_sweeps=2000, measure_sweeps=20_000), step=1)
    print(f"info: 2x2 majority blocking, b=2: nu = {maj.nu} +/- {maj.nu_stderr}")
    assert ok


def test_criterion_7_magnetization():
    cfg = ChainConfig(seed=11, burn_in_sweeps=2000, measure_sweeps=10_000)
    bare60 = {T: magnetization_run(bare_hamiltonian(T, FULL), 60, cfg, T=T) for T in MAG_T}
    m20 = float(bare60[2.0].m)
    ok_bare = abs(m20 - onsager_magnetization(2.0)) <= 0.02
    diffs = {}
    for T in MAG_T:
        h5 = desk_flow(T).row(5)
        diffs[T] = magnetization_run(h5, 20, cfg, T=T).m - bare60[T].m
    ok_h5 = all(abs(d) <= 0.05 for d in diffs.values())
    detail = (
        f"bare 60x60 m(2.0) = {m20:.4f} vs Onsager {onsager_magnetization(2.0):.4f}; "
        + "H5 20x20 minus bare 60x60: "
        + ", ".join(f"T={T}: {d:+.3f}" for T, d in diffs.items())
    )
    verdict(7, ok_bare and ok_h5, detail)
    assert ok_bare and ok_h5, detail


PROPERTY_TESTS = [
    "tests/test_projection.py::test_gram_is_symmetric_psd",
    "tests/test_projection.py::test_solve_gram_examples",
    "tests/test_projection.py::test_projection_contracts",
    "tests/test_projection.py::test_in_span_projection_is_exact",
    "tests/test_basis.py::test_translation_invariance",
    "tests/test_basis.py::test_parity_theorem_even_shell_derivatives",
    "tests/test_sampler.py::test_detailed_balance_of_acceptance",
    "tests/test_sampler.py::test_seed_reproducibility_and_thread_independence",
    "tests/test_cli.py::test_reruns_are_byte_identical",
    "tests/test_flow.py::test_second_moment_is_linear",
    "tests/test_lattice.py::test_relabel_halves_distance_over_offset_table",
]


def test_criterion_8_property_suites():
    root = Path(__file__).resolve().parent.parent
    r = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
        cwd=root,
        capture_output=True,
        text=True,
    )
    last = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr.strip()
    ok = r.returncode == 0
    verdict(8, ok, f"{len(PROPERTY_TESTS)} property tests: {last}")
    assert ok, r.stdout[-2000:]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
