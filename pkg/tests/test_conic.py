import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swiptcran import conic
from swiptcran.conic import Affine, ConicProgram, embed_hermitian, extract_psd_block, unembed_hermitian


def random_hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A + A.conj().T


def test_embed_identity():
    np.testing.assert_array_equal(embed_hermitian(np.eye(3)), np.eye(6))


def test_embed_pauli_eigenvalues():
    H = np.array([[0, -1j], [1j, 0]])
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(embed_hermitian(H))), [-1, -1, 1, 1], atol=1e-12)


def test_embed_rejects_non_hermitian():
    with pytest.raises(ValueError):
        embed_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_embed_doubles_spectrum_and_round_trips(seed, n):
    rng = np.random.default_rng(seed)
    H = random_hermitian(rng, n)
    lam = np.linalg.eigvalsh(H)
    np.testing.assert_allclose(np.linalg.eigvalsh(embed_hermitian(H)), np.sort(np.repeat(lam, 2)), atol=1e-9)
    np.testing.assert_allclose(unembed_hermitian(embed_hermitian(H)), H, atol=1e-12)


@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_embed_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    H1, H2 = random_hermitian(rng, 3), random_hermitian(rng, 3)
    np.testing.assert_allclose(embed_hermitian(a * H1 + b * H2),
                               a * embed_hermitian(H1) + b * embed_hermitian(H2), atol=1e-12)


def test_affine_arithmetic():
    x = Affine({0: 1.0})
    y = Affine({1: 2.0}, 1.0)
    e = 3 * x - y / 2 + 4
    assert e.coef == {0: 3.0, 1: -1.0} and e.const == 3.5
    assert e.value(np.array([1.0, 2.0])) == pytest.approx(4.5)
    with pytest.raises(TypeError):
        x * y


def test_exp_cone_sanity():
    p = ConicProgram()
    t, s = p.scalar("t"), p.scalar("s")
    p.add_exp(t, s)
    p.add_ge(math.e - s)
    p.maximize(t)
    rep = conic.solve(p)
    assert rep.ok and rep.values["t"] == pytest.approx(1.0, abs=1e-6)


def test_trace_of_bounded_psd_block():
    p = ConicProgram()
    X = p.block("X", 2, hermitian=False)
    for i in range(2):
        E = np.zeros((2, 2))
        E[i, i] = 1.0
        p.add_ge(1.0 - p.trace(X, E))
    p.maximize(p.trace(X, np.eye(2)))
    rep = conic.solve(p)
    assert rep.ok and rep.objective_value == pytest.approx(2.0, abs=1e-6)


def test_hermitian_block_round_trip_through_solver():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    H = A @ A.conj().T
    p = ConicProgram()
    X = p.block("X", 3)
    for i, j in itertools.product(range(3), repeat=2):
        E = np.zeros((3, 3), dtype=complex)
        E[i, j] = 0.5
        E[j, i] += 0.5
        p.add_eq(p.trace(X, E) - H[i, j].real)
        if i < j:
            F = np.zeros((3, 3), dtype=complex)
            F[i, j], F[j, i] = 0.5j, -0.5j
            p.add_eq(p.trace(X, F) - H[i, j].imag)
    rep = conic.solve(p)
    assert rep.ok
    np.testing.assert_allclose(extract_psd_block(rep, "X"), H, atol=1e-6)


def test_extract_unknown_block():
    with pytest.raises(KeyError):
        extract_psd_block(conic.SolveReport(status=conic.OPTIMAL), "nope")


def test_duplicate_names_rejected():
    p = ConicProgram()
    p.scalar("x")
    with pytest.raises(ValueError):
        p.block("x", 2)


def test_infeasible_reported_in_band():
    p = ConicProgram()
    x = p.scalar("x")
    p.add_ge(x - 2)
    p.add_ge(1 - x)
    p.maximize(x)
    rep = conic.solve(p)
    assert rep.status == conic.INFEASIBLE and not rep.ok


def test_backend_crash_reported_in_band():
    def broken(prog, options):
        raise RuntimeError("boom")

    conic.register_backend("broken", broken)
    p = ConicProgram()
    p.maximize(p.scalar("x", lower=0.0) * 0)
    rep = conic.solve(p, conic.SolveOptions(backend="broken"))
    assert rep.status == conic.NUMERICAL_FAILURE and "boom" in rep.backend_status


def test_rsoc_and_balance():
    p = ConicProgram()
    x, y = p.scalar("x"), p.scalar("y")
    p.add_rsoc(x, y, [2.0], balance=10.0)
    p.add_ge(1.0 - x)
    p.maximize(-y)
    rep = conic.solve(p)
    assert rep.ok and rep.values["y"] == pytest.approx(4.0, rel=1e-6)


def _lp_vertex_oracle(c, A, b):
    """Best vertex of ``max c.x, A x <= b, x >= 0`` by enumeration."""
    n = len(c)
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = -np.inf
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, float(c @ x))
    return best


@given(st.integers(0, 2**31), st.integers(2, 3))
def test_random_lp_matches_vertex_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 2, n)
    A = rng.uniform(0.1, 2.0, (n + 2, n))
    b = rng.uniform(0.5, 3.0, n + 2)
    p = ConicProgram()
    xs = [p.scalar(f"x{i}", lower=0.0) for i in range(n)]
    for row, bi in zip(A, b):
        p.add_ge(bi - sum(a * x for a, x in zip(row, xs)))
    p.maximize(sum(ci * x for ci, x in zip(c, xs)))
    rep = conic.solve(p)
    assert rep.ok
    assert rep.objective_value == pytest.approx(_lp_vertex_oracle(c, A, b), abs=1e-6)


def test_optimality_smoke_on_tiny_program():
    p = ConicProgram()
    t, s = p.scalar("t"), p.scalar("s")
    p.add_exp(t, s)
    p.add_ge(2.0 - s)
    p.maximize(t)
    rep = conic.solve(p)
    # shrinking the budget by eps lowers the optimum by about eps / s*
    eps = 1e-3
    assert math.log(2.0 - eps) <= rep.objective_value + 1e-8
    assert rep.objective_value <= math.log(2.0) + 1e-6


def test_tally_and_dump():
    p = ConicProgram("demo")
    x = p.scalar("x", lower=0.0)
    p.block("V", 2)
    p.add_soc(x, [1.0], family="norm")
    counts = p.tally()
    assert counts["bound"] == 1 and counts["psd"] == 1 and counts["soc"] == 1
    assert "demo" in p.dump()
