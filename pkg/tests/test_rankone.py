import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swiptcran import oracle, rankone, sca
from swiptcran.rankone import Candidate
from swiptcran.sysmodel import SystemConfig, check_feasible, generate_channels


def unit(rng, n):
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return u / np.linalg.norm(u)


def test_ratio_examples():
    rng = np.random.default_rng(0)
    u = unit(rng, 4)
    assert rankone.rank_one_ratio(np.outer(u, u.conj())) == pytest.approx(0.0, abs=1e-12)
    assert rankone.rank_one_ratio(np.eye(2)) == pytest.approx(1.0)
    assert rankone.rank_one_ratio(np.diag([4.0, 1.0, 0.0])) == pytest.approx(0.25)
    assert rankone.rank_one_ratio(np.zeros((3, 3))) == 0.0


def test_ratio_rejects_non_psd():
    with pytest.raises(ValueError):
        rankone.rank_one_ratio(np.diag([1.0, -0.5]))


@given(st.integers(0, 2**31), st.integers(1, 6), st.floats(0.1, 100))
def test_extract_reconstructs_rank_one(seed, n, theta):
    rng = np.random.default_rng(seed)
    u = unit(rng, n)
    X = theta * np.outer(u, u.conj())
    vec, th = rankone.extract_rank_one(X)
    assert th == pytest.approx(theta, rel=1e-10)
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    assert abs(abs(np.vdot(vec, u)) - 1.0) < 1e-10
    assert np.linalg.norm(th * np.outer(vec, vec.conj()) - X) <= 1e-8 * theta
    first = vec[np.flatnonzero(np.abs(vec) > 1e-12)[0]]
    assert first.imag == pytest.approx(0.0, abs=1e-12) and first.real > 0


def test_extract_refuses_high_rank():
    with pytest.raises(ValueError):
        rankone.extract_rank_one(np.eye(3))


def _random_psd(rng, n, rank):
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


def test_candidates_of_rank_one_blocks_are_aligned():
    rng = np.random.default_rng(1)
    u, w = unit(rng, 4), unit(rng, 3)
    V = np.stack([np.outer(u, u.conj())] * 2)
    W = np.stack([np.stack([np.outer(w, w.conj())] * 2)] * 2)
    for cand in rankone.randomize_candidates(V, W, 5, seed=3):
        for l in range(2):
            assert abs(abs(np.vdot(cand.v[l], u)) - np.linalg.norm(cand.v[l])) < 1e-10


def test_candidate_covariance_matches_block():
    rng = np.random.default_rng(2)
    V = np.stack([_random_psd(rng, 4, 2)])
    W = np.stack([np.stack([_random_psd(rng, 3, 3)])])
    cands = rankone.randomize_candidates(V, W, 10_000, seed=5)
    Cv = np.mean([np.outer(c.v[0], c.v[0].conj()) for c in cands], axis=0)
    Cw = np.mean([np.outer(c.w[0, 0], c.w[0, 0].conj()) for c in cands], axis=0)
    assert np.linalg.norm(Cv - V[0]) <= 0.05 * np.linalg.norm(V[0])
    assert np.linalg.norm(Cw - W[0, 0]) <= 0.05 * np.linalg.norm(W[0, 0])


def test_candidates_deterministic_and_prefix_stable():
    rng = np.random.default_rng(3)
    V = np.stack([_random_psd(rng, 3, 2)] * 2)
    W = np.stack([np.stack([_random_psd(rng, 2, 2)] * 2)] * 2)
    a = rankone.randomize_candidates(V, W, 4, seed=9)
    b = rankone.randomize_candidates(V, W, 4, seed=9)
    c = rankone.randomize_candidates(V, W, 7, seed=9)
    for x, y, z in zip(a, b, c):
        assert np.array_equal(x.v, y.v) and np.array_equal(x.w, y.w)
        assert np.array_equal(x.v, z.v) and np.array_equal(x.w, z.w)


def test_candidates_reject_bad_input():
    with pytest.raises(ValueError):
        rankone.randomize_candidates(np.stack([np.diag([1.0, -1.0])]), np.ones((1, 1, 1, 1)), 2, 0)
    with pytest.raises(ValueError):
        rankone.randomize_candidates(np.stack([np.eye(2)]), np.ones((1, 1, 1, 1)), 0, 0)


@pytest.fixture(scope="module")
def relaxed():
    cfg = SystemConfig()
    ch = generate_channels(cfg, 42)
    return cfg, ch, sca.run_algorithm1(ch, cfg)


def _factors(res):
    v = np.stack([np.sqrt(th) * u for u, th in (rankone.extract_rank_one(X) for X in res.V)])
    w = np.stack([np.stack([np.sqrt(th) * u for u, th in (rankone.extract_rank_one(X) for X in Wl)])
                  for Wl in res.W])
    return Candidate(v, w)


def test_scaling_of_exact_factors_reproduces_relaxed_objective(relaxed):
    cfg, ch, res = relaxed
    out = rankone.solve_scaling_subproblem(_factors(res), ch, cfg)
    assert out.feasible
    assert abs(out.objective - res.objective) <= 1e-3 * res.objective
    assert check_feasible(ch, out.solution, cfg).feasible


def test_zero_candidate_infeasible_with_energy_target():
    cfg = SystemConfig(E_min=1e-10)
    ch = generate_channels(cfg, 0)
    zero = Candidate(np.zeros((cfg.L, cfg.N), complex), np.zeros((cfg.L, cfg.K, cfg.M), complex))
    out = rankone.solve_scaling_subproblem(zero, ch, cfg)
    assert not out.feasible and out.reason


def test_scaling_matches_grid_on_single_link():
    cfg = SystemConfig(L=1, M=1, K=1, N=1)
    for seed in range(3):
        ch = generate_channels(cfg, seed)
        cand = Candidate(np.ones((1, 1), complex), np.ones((1, 1, 1), complex))
        out = rankone.solve_scaling_subproblem(cand, ch, cfg)
        grid = oracle.grid_search_tiny(ch, cfg, oracle.GridSpec(beta_points=2000, power_points=201))
        assert out.objective * 1e6 == pytest.approx(grid.sum_rate, rel=0.02)


def test_recover_takes_evd_path_on_rank_one(relaxed):
    cfg, ch, res = relaxed
    rec = rankone.recover_from_result(res, ch, cfg)
    assert rec.path == "evd" and rec.candidates_tried == 1
    assert abs(rec.relax_gap) <= 1e-3
    assert check_feasible(ch, rec.best, cfg).feasible


def test_single_candidate_equals_subproblem(relaxed):
    cfg, ch, res = relaxed
    rec = rankone.recover_solution(res.V, res.W, res.beta, ch, cfg, count=1, seed=4, threshold=-1.0)
    cand = rankone.randomize_candidates(res.V, res.W, 1, seed=4)[0]
    direct = rankone.solve_scaling_subproblem(cand, ch, cfg)
    assert rec.path == "randomization" and rec.best_candidate_index == 0
    assert rec.recovered_objective == pytest.approx(direct.objective, rel=1e-12)


def test_more_candidates_never_worse(relaxed):
    cfg, ch, res = relaxed
    few = rankone.recover_solution(res.V, res.W, res.beta, ch, cfg, count=2, seed=1, threshold=-1.0)
    more = rankone.recover_solution(res.V, res.W, res.beta, ch, cfg, count=4, seed=1, threshold=-1.0)
    assert more.recovered_objective >= few.recovered_objective
    assert all(check_feasible(ch, r.best, cfg).feasible for r in (few, more))


def test_all_infeasible_raises_with_diagnostics(relaxed):
    cfg, ch, res = relaxed
    with pytest.raises(rankone.RecoveryError) as err:
        rankone.recover_solution(np.zeros_like(res.V), np.zeros_like(res.W), res.beta, ch, cfg,
                                 count=3, threshold=-1.0, relaxed_objective=1.0)
    assert len(err.value.reasons) == 3


def test_solve_and_recover_bounded_by_relaxation(relaxed):
    cfg, ch, _ = relaxed
    res, rec = rankone.solve_and_recover(ch, cfg, seed=42)
    assert rec.recovered_objective <= rec.relaxed_objective * (1 + 1e-6)
    assert res.first.trace.is_monotone(1e-5)
