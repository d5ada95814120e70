"""Beamformer recovery from relaxed (lifted) solutions.

A relaxed solution whose blocks are all numerically rank one is factored
directly. Otherwise Gaussian randomization draws candidate beamformer sets
with the relaxed blocks as covariances, and each candidate's powers and
split ratios are re-optimized by the same successive convex approximation
with 1 x 1 blocks: block ``V_l`` becomes the power scaling ``c_l`` of
candidate ``v_l`` and block ``W_lk`` the scaling ``t_lk`` of ``w_lk``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import sca
from .sysmodel import (
    BeamformingSolution,
    ChannelRealization,
    SystemConfig,
    access_rate_all,
    check_feasible,
    evaluate_solution,
    fronthaul_rate_all,
    harvested_energy_all,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1e-4
DEFAULT_CANDIDATES = 50
PSD_TOL = 1e-8


class RecoveryError(RuntimeError):
    """No candidate produced a feasible beamformer set."""

    def __init__(self, message: str, reasons: list | None = None):
        super().__init__(message)
        self.reasons = reasons or []


# ---------------------------------------------------------------------------
# rank-one detection and extraction


def _eigh_psd(M) -> tuple[np.ndarray, np.ndarray]:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    H = 0.5 * (M + M.conj().T)
    lam, U = np.linalg.eigh(H)
    scale = max(1.0, float(np.abs(lam).max(initial=0.0)))
    if lam.size and lam[0] < -PSD_TOL * scale:
        raise ValueError(f"matrix is not PSD (min eigenvalue {lam[0]:.3e})")
    return np.maximum(lam, 0.0), U


def rank_one_ratio(M) -> float:
    """Second-largest over largest eigenvalue; 0 for the zero matrix."""
    lam, _ = _eigh_psd(M)
    if lam.size < 2 or lam[-1] <= 0.0:
        return 0.0
    return float(lam[-2] / lam[-1])


def _phase_normalize(u: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(u) > 1e-12 * max(1.0, np.abs(u).max(initial=0.0)))
    if nz.size == 0:
        return u
    ph = u[nz[0]] / abs(u[nz[0]])
    return u / ph


def extract_rank_one(M, threshold: float = DEFAULT_THRESHOLD) -> tuple[np.ndarray, float]:
    """Unit dominant eigenvector and its eigenvalue ``theta``.

    The vector's first nonzero entry is real and positive, so
    ``theta * u u^H`` reconstructs ``M`` when ``M`` is rank one.
    """
    ratio = rank_one_ratio(M)
    if ratio > threshold:
        raise ValueError(f"matrix is not rank one (ratio {ratio:.3e} > {threshold:.1e})")
    lam, U = _eigh_psd(M)
    return _phase_normalize(U[:, -1].astype(complex)), float(lam[-1])


def is_rank_one(V, W, threshold: float = DEFAULT_THRESHOLD) -> bool:
    blocks = list(V) + [Wlk for Wl in W for Wlk in Wl]
    return all(rank_one_ratio(X) <= threshold for X in blocks)


def max_rank_one_ratio(V, W) -> float:
    blocks = list(V) + [Wlk for Wl in W for Wlk in Wl]
    return max(rank_one_ratio(X) for X in blocks)


# ---------------------------------------------------------------------------
# randomization


@dataclass
class Candidate:
    v: np.ndarray  # (L, N)
    w: np.ndarray  # (L, K, M)


def _sqrt_factor(M) -> np.ndarray:
    lam, U = _eigh_psd(M)
    return U * np.sqrt(lam)


def _cn(rng: np.random.Generator, n: int) -> np.ndarray:
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)


def randomize_candidates(V_star, W_star, count: int, seed: int | None = None) -> list[Candidate]:
    """Joint Gaussian draws ``v = X D^(1/2) s`` and ``w = Y Omega^(1/2) u``.

    ``s`` and ``u`` are standard circular complex Gaussian, so each
    candidate's covariance is the relaxed block. Every draw consumes the
    same amount of randomness, so a larger ``count`` extends the list.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    V_star = np.asarray(V_star)
    W_star = np.asarray(W_star)
    L, N = V_star.shape[0], V_star.shape[1]
    K, M = W_star.shape[1], W_star.shape[2]
    Fv = [_sqrt_factor(V_star[l]) for l in range(L)]
    Fw = [[_sqrt_factor(W_star[l, k]) for k in range(K)] for l in range(L)]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = np.stack([Fv[l] @ _cn(rng, N) for l in range(L)])
        w = np.stack([np.stack([Fw[l][k] @ _cn(rng, M) for k in range(K)]) for l in range(L)])
        out.append(Candidate(v=v, w=w))
    return out


# ---------------------------------------------------------------------------
# feasibility repair


def repair(chan: ChannelRealization, config: SystemConfig, v, w, beta) -> BeamformingSolution:
    """Smallest adjustments that make ``(v, w, beta)`` satisfy every constraint.

    Powers are scaled into their budgets, split ratios are lowered to meet
    the energy target, and a cluster whose access rate exceeds its
    fronthaul rate gets its split ratios scaled down by bisection.
    """
    v = np.array(v, dtype=complex)
    w = np.array(w, dtype=complex)
    beta = np.clip(np.array(beta, dtype=float), sca.AUX_FLOOR, 1.0 - sca.AUX_FLOOR)
    used = float(np.sum(np.abs(v) ** 2))
    if used > config.P_cp_max:
        v *= math.sqrt(config.P_cp_max / used)
    for l in range(chan.L):
        used = float(np.max(np.sum(np.abs(w[l]) ** 2, axis=0)))
        if used > config.P_bs_max:
            w[l] *= math.sqrt(config.P_bs_max / used)
    if config.E_min > 0:
        full = harvested_energy_all(chan, w, np.zeros_like(beta) + 1e-300, config)
        with np.errstate(divide="ignore"):
            cap = 1.0 - config.E_min / full
        beta = np.clip(np.minimum(beta, cap), sca.AUX_FLOOR, 1.0 - sca.AUX_FLOOR)
    R_fh = fronthaul_rate_all(chan, v, config).min(axis=1)
    for l in range(chan.L):
        def rate(s, l=l):
            b = beta.copy()
            b[l] = np.maximum(b[l] * s, 1e-300)
            return float(access_rate_all(chan, w, b, config)[l].sum())

        if rate(1.0) <= R_fh[l]:
            continue
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if rate(mid) > R_fh[l]:
                hi = mid
            else:
                lo = mid
        beta[l] = np.maximum(beta[l] * lo, 1e-300)
    return evaluate_solution(chan, v, w, beta, config)


# ---------------------------------------------------------------------------
# scaling subproblem


@dataclass
class ScalingResult:
    feasible: bool
    c: np.ndarray | None = None  # (L,) power scalings of v
    t: np.ndarray | None = None  # (L, K) power scalings of w
    beta: np.ndarray | None = None
    objective: float = -math.inf  # Mbit/s
    solution: BeamformingSolution | None = None
    iterations: int = 0
    reason: str = ""


def scaling_data(candidate: Candidate, chan: ChannelRealization, config: SystemConfig) -> sca.ProblemData:
    """Problem data with 1 x 1 blocks priced by the candidate's quadratic forms."""
    v, w = np.asarray(candidate.v), np.asarray(candidate.w)
    L, K, M = chan.L, chan.K, chan.M
    n_fh, n_ac = config.fronthaul_noise_mw, config.access_noise_mw
    hv = np.abs(np.einsum("lmn,jn->lmj", chan.h, v)) ** 2 / n_fh  # BS (l,m), stream j
    gw = np.abs(np.einsum("jlkm,jim->lkji", chan.g, w)) ** 2 / n_ac  # user (l,k), stream (j,i)
    bs_weight = np.zeros((L, M, K, 1, 1))
    for m in range(M):
        bs_weight[:, m, :, 0, 0] = np.abs(w[:, :, m]) ** 2 / config.P_bs_max
    return sca.ProblemData(
        H=hv[..., None, None],
        G=gw[..., None, None],
        cp_weight=(np.sum(np.abs(v) ** 2, axis=1) / config.P_cp_max)[:, None, None],
        bs_weight=bs_weight,
        split_noise=config.split_noise_mw / n_ac,
        energy_min=config.E_min / (config.eta * n_ac),
        B_mm=config.B_mm / 1e6,
        B_mc=config.B_mc / 1e6,
    )


def _full_power_scalings(data: sca.ProblemData):
    cp = float(data.cp_weight[:, 0, 0].sum())
    c = np.full(data.L, 1.0 / cp if cp > 0 else 1.0)
    t = np.ones((data.L, data.K))
    for l in range(data.L):
        used = float(data.bs_weight[l, :, :, 0, 0].sum(axis=1).max())
        if used > 0:
            t[l] = 1.0 / used
    return c, t


def solve_scaling_subproblem(
    candidate: Candidate,
    chan: ChannelRealization,
    config: SystemConfig,
    opts: sca.SCAOptions | None = None,
) -> ScalingResult:
    """Best power scalings and split ratios for fixed beamformer directions.

    Starts from full power with split ratios of one half and runs the same
    iteration as the full problem. Candidates that admit no feasible start
    are reported, not raised.
    """
    opts = opts or sca.SCAOptions(polish=False)
    data = scaling_data(candidate, chan, config)
    c0, t0 = _full_power_scalings(data)
    try:
        state = sca.initialize_from_blocks(data, c0[:, None, None].astype(complex),
                                           t0[:, :, None, None].astype(complex))
        res = sca.run_sca(data, state, opts)
    except sca.InfeasibleInitError as exc:
        return ScalingResult(feasible=False, reason=str(exc))
    except sca.SolverFailure as exc:
        return ScalingResult(feasible=False, reason=str(exc))
    st = res.state
    c = np.real(st.V[:, 0, 0]).clip(min=0.0)
    t = np.real(st.W[:, :, 0, 0]).clip(min=0.0)
    v = np.sqrt(c)[:, None] * np.asarray(candidate.v)
    w = np.sqrt(t)[:, :, None] * np.asarray(candidate.w)
    sol = repair(chan, config, v, w, st.beta)
    report = check_feasible(chan, sol, config)
    return ScalingResult(
        feasible=report.feasible, c=c, t=t, beta=sol.beta, objective=sol.sum_rate / 1e6,
        solution=sol, iterations=res.iterations,
        reason="" if report.feasible else "violates " + ", ".join(report.violations()),
    )


# ---------------------------------------------------------------------------
# recovery


@dataclass
class RandomizationResult:
    path: str  # "evd" or "randomization"
    candidates_tried: int
    best_candidate_index: int
    best: BeamformingSolution
    relaxed_objective: float  # Mbit/s
    recovered_objective: float  # Mbit/s
    relax_gap: float
    feasible_flags: list = field(default_factory=list)
    max_ratio: float = 0.0


def relaxed_sum_rate(V, W, beta, chan: ChannelRealization, config: SystemConfig) -> float:
    """Sum rate (Mbit/s) of relaxed blocks in mW, fronthaul cap applied."""
    data = sca.full_problem_data(chan, config)
    st = sca.tight_state(data, np.asarray(V) / data.v_unit, np.asarray(W) / data.w_unit, beta)
    return sca.state_objective(st, data)


def recover_solution(
    V,
    W,
    beta,
    chan: ChannelRealization,
    config: SystemConfig,
    count: int = DEFAULT_CANDIDATES,
    seed: int | None = 0,
    threshold: float = DEFAULT_THRESHOLD,
    relaxed_objective: float | None = None,
    opts: sca.SCAOptions | None = None,
) -> RandomizationResult:
    """Beamformers from relaxed blocks ``V`` (L,N,N) and ``W`` (L,K,M,M) in mW."""
    V = np.asarray(V, dtype=complex)
    W = np.asarray(W, dtype=complex)
    if relaxed_objective is None:
        relaxed_objective = relaxed_sum_rate(V, W, beta, chan, config)
    ratio = max_rank_one_ratio(V, W)

    def finish(path, tried, idx, sol, flags):
        rec = sol.sum_rate / 1e6
        gap = (relaxed_objective - rec) / relaxed_objective if relaxed_objective > 0 else 0.0
        return RandomizationResult(path=path, candidates_tried=tried, best_candidate_index=idx, best=sol,
                                   relaxed_objective=relaxed_objective, recovered_objective=rec,
                                   relax_gap=gap, feasible_flags=flags, max_ratio=ratio)

    if ratio <= threshold:
        v = np.stack([math.sqrt(th) * u for u, th in (extract_rank_one(X, threshold) for X in V)])
        w = np.stack([np.stack([math.sqrt(th) * u for u, th in (extract_rank_one(X, threshold) for X in Wl)])
                      for Wl in W])
        sol = repair(chan, config, v, w, beta)
        ok = check_feasible(chan, sol, config).feasible
        if ok:
            return finish("evd", 1, 0, sol, [True])
        log.debug("rank-one factors infeasible after repair; falling back to randomization")

    best, best_idx, flags, reasons = None, -1, [], []
    for n, cand in enumerate(randomize_candidates(V, W, count, seed)):
        res = solve_scaling_subproblem(cand, chan, config, opts)
        flags.append(res.feasible)
        if not res.feasible:
            reasons.append(f"candidate {n}: {res.reason}")
            continue
        if best is None or res.objective > best.objective:
            best, best_idx = res, n
    if best is None:
        raise RecoveryError(f"all {count} candidates infeasible", reasons)
    return finish("randomization", count, best_idx, best.solution, flags)


def recover_from_result(result: sca.SCAResult, chan: ChannelRealization, config: SystemConfig,
                        **kwargs) -> RandomizationResult:
    return recover_solution(result.V, result.W, result.beta, chan, config,
                            relaxed_objective=result.objective, **kwargs)


def warm_start_state(solution: BeamformingSolution, data: sca.ProblemData) -> sca.SCAState:
    """SCA state whose blocks are the outer products of a beamformer set."""
    V = np.einsum("la,lb->lab", solution.v, solution.v.conj()) / data.v_unit
    W = np.einsum("lka,lkb->lkab", solution.w, solution.w.conj()) / data.w_unit
    return sca.tight_state(data, V, W, solution.beta)


def solve_and_recover(
    chan: ChannelRealization,
    config: SystemConfig,
    opts: sca.SCAOptions | None = None,
    count: int = DEFAULT_CANDIDATES,
    seed: int | None = 0,
    threshold: float = DEFAULT_THRESHOLD,
    refinements: int = 3,
) -> tuple[sca.SCAResult, RandomizationResult]:
    """Relaxed solve followed by recovery.

    When the recovered beamformers beat the relaxed objective, the relaxed
    iterate had not yet reached a stationary point; the iteration resumes
    from the recovered point, which can only raise the relaxed objective.
    """
    opts = opts or sca.SCAOptions()
    result = sca.run_algorithm1(chan, config, opts)
    rec = recover_from_result(result, chan, config, count=count, seed=seed, threshold=threshold)
    for _ in range(refinements):
        if rec.recovered_objective <= rec.relaxed_objective + 1e-6 * max(1.0, rec.relaxed_objective):
            break
        state = warm_start_state(rec.best, result.data)
        resumed = sca.run_sca(result.data, state, opts)
        if resumed.objective < rec.recovered_objective:
            break
        result = replace(resumed, previous=result)
        rec = recover_from_result(result, chan, config, count=count, seed=seed, threshold=threshold)
    return result, rec
