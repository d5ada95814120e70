"""Acceptance criteria 1 to 9; each test prints one PASS/FAIL line."""
import time

import numpy as np
import pytest

from swiptcran import cli, oracle, rankone, sca
from swiptcran.sysmodel import SystemConfig, generate_channels

SEEDS = range(100)
SWEEP_TRIALS = 5
P_CP_GRID = tuple(float(x) for x in range(34, 51, 2))
P_BS_GRID = tuple(float(x) for x in range(4, 21, 2))
P_CP_SWEEP_BASE = SystemConfig(P_bs_max_dbm=10.0)
P_BS_SWEEP_BASE = SystemConfig(P_cp_max_dbm=40.0)
E_MIN_HIGH = 1e-10


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def default_runs():
    config = SystemConfig()
    runs = []
    for seed in SEEDS:
        chan = generate_channels(config, seed)
        result, rec = rankone.solve_and_recover(chan, config, seed=seed)
        runs.append((chan, result, rec))
    return config, runs


def test_criterion_1_monotone_sca(default_runs, capsys):
    _, runs = default_runs
    first = [res.first for _, res, _ in runs[:50]]
    bad = [i for i, res in enumerate(first) if not res.trace.is_monotone(1e-5)]
    report(capsys, 1, not bad, f"{50 - len(bad)}/50 monotone traces, non-monotone seeds {bad}")


def test_criterion_2_convergence_count(default_runs, capsys):
    _, runs = default_runs
    first = [res.first for _, res, _ in runs[:50]]
    ok = sum(res.converged and res.iterations <= 25 for res in first)
    worst = max(res.iterations for res in first)
    report(capsys, 2, ok >= 45, f"{ok}/50 converged within 25 iterations, max {worst}")


def test_criterion_3_rank_one_prevalence(default_runs, capsys):
    _, runs = default_runs
    ratios = [rankone.max_rank_one_ratio(res.first.V, res.first.W) for _, res, _ in runs]
    ok = sum(r <= rankone.DEFAULT_THRESHOLD for r in ratios)
    report(capsys, 3, ok >= 90, f"{ok}/100 relaxed solutions rank-one, worst ratio {max(ratios):.2e}")


def test_criterion_4_feasibility(default_runs, capsys):
    config, runs = default_runs
    reports = [oracle.verify_solution(chan, config, rec.best, tolerance=1e-6) for chan, _, rec in runs]
    bad = [i for i, r in enumerate(reports) if not r.feasible]
    worst = max(max(r.residuals.values()) for r in reports)
    mismatch = max(r.rate_mismatch for r in reports)
    report(capsys, 4, not bad and mismatch <= 1e-5,
           f"{100 - len(bad)}/100 verified, worst residual {worst:.1e}, rate mismatch {mismatch:.1e}")


def test_criterion_5_oracle_agreement(capsys):
    spec = oracle.GridSpec(beta_points=10_000)
    gaps = []
    start = time.perf_counter()
    for K in (1, 2):
        tiny = SystemConfig(L=1, M=1, K=K, N=1)
        for seed in range(10):
            chan = generate_channels(tiny, seed)
            grid = oracle.grid_search_tiny(chan, tiny, spec)
            _, rec = rankone.solve_and_recover(chan, tiny, sca.SCAOptions(starts=K + 1), seed=seed)
            gaps.append((grid.sum_rate / 1e6 - rec.recovered_objective) / (grid.sum_rate / 1e6))
    elapsed = time.perf_counter() - start
    ok = max(gaps) <= 0.02 and elapsed < 60
    report(capsys, 5, ok, f"worst shortfall {max(gaps):.2e} over 20 instances in {elapsed:.1f} s")


def test_criterion_6_surrogates(capsys):
    surr = oracle.check_surrogates(1_000_000, seed=0)
    ok = surr.passed and surr.max_reference_error <= 1e-10
    report(capsys, 6, ok, f"{surr.samples} samples, counterexample {surr.counterexample}, "
                          f"reference error {surr.max_reference_error:.1e}")


def _sweep_means(parameter, values, config):
    spec = cli.SweepSpec(parameter, values, trials=SWEEP_TRIALS, config=config)
    rows = cli.run_sweep(spec)
    assert all(r[-1].startswith(f"{SWEEP_TRIALS}/") or r[-1] == "ok" for r in rows), "failed sweep trials"
    means = cli.sweep_means(rows)
    return np.array([means[v] for v in values])


def _rises_then_saturates(means):
    steps = np.diff(means) / means[:-1]
    return bool(np.all(steps >= -1e-3) and abs(steps[-1]) < 0.01 and means[-1] > 1.05 * means[0])


def test_criterion_7_trends(capsys):
    cp = _sweep_means("p_cp_max", P_CP_GRID, P_CP_SWEEP_BASE)
    high = _sweep_means("p_cp_max", P_CP_GRID[-1:], P_CP_SWEEP_BASE.with_(E_min=E_MIN_HIGH))[0]
    bs = _sweep_means("p_bs_max", P_BS_GRID, P_BS_SWEEP_BASE)
    ok_cp, ok_bs = _rises_then_saturates(cp), _rises_then_saturates(bs)
    ok_e = high < cp[-1]
    detail = (f"P_CP means {np.round(cp, 2).tolist()}; E_min {E_MIN_HIGH:g} mW at {P_CP_GRID[-1]:g} dBm "
              f"{high:.2f} vs {cp[-1]:.2f}; P_BS means {np.round(bs, 2).tolist()}")
    report(capsys, 7, ok_cp and ok_bs and ok_e, detail)


def test_criterion_8_relaxation_gap(default_runs, capsys):
    _, runs = default_runs
    above = [i for i, (_, _, rec) in enumerate(runs)
             if rec.recovered_objective > rec.relaxed_objective * (1 + 1e-6)]
    rank_one = [rec for _, _, rec in runs if rec.max_ratio <= rankone.DEFAULT_THRESHOLD]
    wide = [rec.relax_gap for rec in rank_one if rec.relax_gap > 1e-3]
    gaps = [rec.relax_gap for _, _, rec in runs]
    ok = not above and not wide
    report(capsys, 8, ok, f"recovered above relaxed in {len(above)} trials, {len(wide)} rank-one gaps over 1e-3, "
                          f"gap range [{min(gaps):.1e}, {max(gaps):.1e}]")


def test_criterion_9_complexity(capsys):
    est = cli.estimate_complexity(SystemConfig())
    got = (est["delta"], est["z"], est["z1"], est["z2"], est["z3"])
    report(capsys, 9, got == (111, 164, 1265, 245, 516), f"delta, z, z1, z2, z3 = {got}")
