"""Successive convex approximation of the lifted sum-rate problem.

The relaxed program is built in normalized units so the conic solver sees
O(1) numbers:

* transmit matrices are expressed in units of their power budget,
* received powers in units of the thermal noise of their band,
* bandwidths in MHz, so rates come out in Mbit/s.

``ProblemData`` carries the gain matrices in those units. The same data
structure covers the full beamforming problem (matrix blocks) and the
scalar power-scaling problem used after randomization (1 x 1 blocks whose
gains are the fixed quadratic forms of a candidate).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .conic import Affine, ConicProgram, SolveOptions, asum
from .sysmodel import ChannelRealization, SystemConfig

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
AUX_FLOOR = 1e-12
INIT_SLACK = 0.99


class InfeasibleInitError(RuntimeError):
    """No feasible starting point; ``constraint`` names the blocker."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"infeasible initialization: {constraint} {detail}".strip())


class SolverFailure(RuntimeError):
    def __init__(self, message: str, last_state=None, trace=None):
        super().__init__(message)
        self.last_state = last_state
        self.trace = trace


# ---------------------------------------------------------------------------
# surrogates


def bilinear_majorizer(x, y, x0, y0):
    """Convex upper bound of ``x*y`` tight at ``(x0, y0)`` (positive refs)."""
    return x0 * y**2 / (2.0 * y0) + y0 * x**2 / (2.0 * x0)


def log_taylor_upper(d, d0):
    """Tangent of the concave ``log(1+d)`` at ``d0`` (natural log)."""
    return np.log1p(d0) + (d - d0) / (1.0 + d0)


def square_minorizer(u, u0):
    """Tangent lower bound of ``u**2`` at ``u0``."""
    return 2.0 * u0 * u - u0**2


# ---------------------------------------------------------------------------
# problem data


@dataclass
class ProblemData:
    """Gain matrices of the relaxed program in normalized units.

    ``H[l, m, j]``: gain of block ``V_j`` at BS (l, m), per fronthaul noise.
    ``G[l, k, j, i]``: gain of block ``W_ji`` at user (l, k), per access noise.
    ``cp_weight[l]``: ``sum_l tr(cp_weight[l] V_l) <= 1``.
    ``bs_weight[l, m, k]``: ``sum_k tr(bs_weight[l, m, k] W_lk) <= 1``.
    """

    H: np.ndarray
    G: np.ndarray
    cp_weight: np.ndarray
    bs_weight: np.ndarray
    split_noise: float
    energy_min: float
    B_mm: float
    B_mc: float
    v_unit: float = 1.0
    w_unit: float = 1.0

    @property
    def L(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @property
    def K(self) -> int:
        return self.G.shape[1]

    @property
    def nV(self) -> int:
        return self.H.shape[-1]

    @property
    def nW(self) -> int:
        return self.G.shape[-1]


def full_problem_data(chan: ChannelRealization, config: SystemConfig) -> ProblemData:
    L, M, K, N = chan.L, chan.M, chan.K, chan.N
    n_ac = config.access_noise_mw
    n_fh = config.fronthaul_noise_mw
    P_cp, P_bs = config.P_cp_max, config.P_bs_max
    Hlm = np.einsum("lma,lmb->lmab", chan.h.conj(), chan.h) * (P_cp / n_fh)
    H = np.broadcast_to(Hlm[:, :, None], (L, M, L, N, N))
    Gjlk = np.einsum("jlka,jlkb->jlkab", chan.g.conj(), chan.g) * (P_bs / n_ac)
    # G[l, k, j, i] = G_jlk for every i
    G = np.broadcast_to(np.transpose(Gjlk, (1, 2, 0, 3, 4))[:, :, :, None], (L, K, L, K, M, M))
    cp_weight = np.broadcast_to(np.eye(N), (L, N, N))
    eye = np.eye(M)
    bs_weight = np.broadcast_to(
        np.einsum("ma,mb->mab", eye, eye)[None, :, None], (L, M, K, M, M)
    )
    return ProblemData(
        H=H, G=G, cp_weight=cp_weight, bs_weight=bs_weight,
        split_noise=config.split_noise_mw / n_ac,
        energy_min=config.E_min / (config.eta * n_ac),
        B_mm=config.B_mm / 1e6, B_mc=config.B_mc / 1e6,
        v_unit=P_cp, w_unit=P_bs,
    )


def received_terms(data: ProblemData, V, W):
    """Signal / interference traces, normalized.

    Returns ``S[l,k]``, ``Gam[l,k]``, ``fh_sig[l,m]``, ``fh_int[l,m]``.
    """
    L, K = data.L, data.K
    T = np.einsum("lkjiab,jiba->lkji", data.G, W).real
    S = np.empty((L, K))
    for l in range(L):
        for k in range(K):
            S[l, k] = T[l, k, l, k]
    Gam = T.sum(axis=(2, 3)) - S
    F = np.einsum("lmjab,jba->lmj", data.H, V).real
    sig = np.stack([F[l, :, l] for l in range(L)])
    return S, Gam, sig, F.sum(axis=2) - sig


# ---------------------------------------------------------------------------
# state


@dataclass
class SCAState:
    V: np.ndarray  # (L, nV, nV) Hermitian, normalized
    W: np.ndarray  # (L, K, nW, nW)
    beta: np.ndarray  # (L, K)
    a: np.ndarray
    b: np.ndarray
    xi: np.ndarray
    eps: np.ndarray
    d: np.ndarray
    ups: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    c: np.ndarray  # (L,)
    lam: np.ndarray  # (L, M)
    omega: np.ndarray  # (L, M)
    n: int = 0


_LK_FIELDS = ("beta", "a", "b", "xi", "eps", "d", "ups", "tau", "phi")


def state_objective(state: SCAState, data: ProblemData) -> float:
    return float(np.sum(data.B_mm * np.log2(1.0 + state.a)))


def start_profiles(K: int, count: int) -> list:
    """Per-user power fractions of the initial access beamformers.

    Profile 0 splits power equally; profile ``1 + k`` gives user ``k`` of
    every cluster all but 1% per other user.
    """
    out = [np.full(K, 1.0 / K)]
    for k in range(K):
        if len(out) >= count:
            break
        p = np.full(K, 0.01)
        p[k] = 1.0 - 0.01 * (K - 1)
        out.append(p)
    return out[:max(1, count)]


def initial_blocks(chan: ChannelRealization, config: SystemConfig, profile=None):
    """Dominant-eigenvector multicast and matched-filter access.

    ``profile`` holds each user's share of the per-BS power (equal by default).
    """
    L, M, K, N = chan.L, chan.M, chan.K, chan.N
    profile = np.full(K, 1.0 / K) if profile is None else np.asarray(profile, dtype=float)
    V = np.zeros((L, N, N), dtype=complex)
    for l in range(L):
        R = np.einsum("ma,mb->ab", chan.h[l].conj(), chan.h[l])
        _, U = np.linalg.eigh(R)
        u = U[:, -1]
        V[l] = np.outer(u, u.conj()) / L
    W = np.zeros((L, K, M, M), dtype=complex)
    for l in range(L):
        for k in range(K):
            g = chan.g[l, l, k]
            w = np.where(np.abs(g) > 0, g.conj() / np.maximum(np.abs(g), 1e-300), 1.0) * math.sqrt(profile[k])
            W[l, k] = np.outer(w, w.conj())
    return V, W


def initialize_from_blocks(data: ProblemData, V, W, beta0: float = 0.5) -> SCAState:
    """Feasible SCA state around fixed transmit blocks.

    Split ratios start at ``beta0``, lowered where the energy target needs
    it. A cluster whose access rate exceeds 99% of its fronthaul rate has
    its access blocks scaled down; if no scaling works, its split ratios
    are pushed toward zero instead.
    """
    L, K, M = data.L, data.K, data.M
    nu = data.split_noise
    W = np.array(W, dtype=complex)
    _, _, sig, fh_int = received_terms(data, V, W)
    lam = INIT_SLACK * sig / (fh_int + 1.0)
    omega = fh_int + 1.0
    c = (data.B_mc * np.log2(1.0 + lam)).min(axis=1)
    if np.any(c <= 0):
        raise InfeasibleInitError(f"fronthaul[{int(np.argmin(c))}]", "(zero fronthaul rate)")

    def split_for(b):
        beta = np.full((L, K), float(beta0))
        if data.energy_min > 0:
            beta = np.minimum(beta, 1.0 - 1.01 * data.energy_min / b)
        return beta

    def cluster_rate(l, Wt, beta_scale=1.0):
        S, Gam, _, _ = received_terms(data, V, Wt)
        beta = split_for(S + Gam + 1.0)[l] * beta_scale
        if np.any(beta <= 0):
            return math.inf
        return float(np.sum(data.B_mm * np.log2(1.0 + S[l] / (Gam[l] + 1.0 + nu / beta))))

    def bisect(too_high):
        lo, hi = 0.0, 1.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if too_high(mid):
                hi = mid
            else:
                lo = mid
        return lo

    S0, Gam0, _, _ = received_terms(data, V, W)
    unreachable = np.argwhere(split_for(S0 + Gam0 + 1.0) <= 1e-9)
    if len(unreachable):
        l, k = unreachable[0]
        b = S0[l, k] + Gam0[l, k] + 1.0
        raise InfeasibleInitError(
            f"energy[{l},{k}]",
            f"(max harvestable {b:.4g} < required {data.energy_min:.4g} in noise units)",
        )

    # scaling one cluster down raises the others' rates, so sweep until stable
    beta_scale = np.ones(L)
    for _ in range(100):
        changed = False
        for l in range(L):
            cap = INIT_SLACK * c[l]
            if cluster_rate(l, W, beta_scale[l]) <= cap * (1.0 + 1e-12):
                continue
            changed = True

            def scaled(s, l=l):
                Wt = W.copy()
                Wt[l] *= s
                return Wt

            s = bisect(lambda x: cluster_rate(l, scaled(x), beta_scale[l]) > cap)
            if s > 0 and cluster_rate(l, scaled(s), beta_scale[l]) <= cap:
                W = scaled(s)
                continue
            r = bisect(lambda x: cluster_rate(l, W, beta_scale[l] * x) > cap)
            if r <= 0:
                raise InfeasibleInitError(f"fronthaul[{l}]", "(access rate cannot be reduced below fronthaul rate)")
            beta_scale[l] *= r
        if not changed:
            break
    else:
        raise InfeasibleInitError("fronthaul", "(access scaling did not settle)")

    S, Gam, _, _ = received_terms(data, V, W)
    b = S + Gam + 1.0
    beta = split_for(b) * beta_scale[:, None]
    bad = np.argwhere(beta <= 1e-9)
    if len(bad):
        l, k = bad[0]
        raise InfeasibleInitError(
            f"energy[{l},{k}]",
            f"(max harvestable {b[l, k]:.4g} < required {data.energy_min:.4g} in noise units)",
        )

    eps = 1.0 / beta
    tau = 1.0 / beta
    xi = Gam + 1.0 + nu * eps
    a = INIT_SLACK * S / xi
    phi = S.copy()
    ups = np.sqrt(np.maximum(S, 0.0))
    d = S / (Gam + 1.0 + nu * tau)
    fl = lambda x: np.maximum(x, AUX_FLOOR)  # noqa: E731
    return SCAState(
        V=np.array(V, dtype=complex), W=W, beta=beta,
        a=fl(a), b=fl(b), xi=fl(xi), eps=fl(eps), d=fl(d), ups=fl(ups), tau=fl(tau), phi=fl(phi),
        c=fl(c), lam=fl(lam), omega=fl(omega), n=0,
    )


def initialize_state(
    chan: ChannelRealization, config: SystemConfig, data: ProblemData | None = None, profile=None
) -> SCAState:
    data = data if data is not None else full_problem_data(chan, config)
    V, W = initial_blocks(chan, config, profile)
    return initialize_from_blocks(data, V, W)


# ---------------------------------------------------------------------------
# relaxed program


def _name(base, *idx):
    return f"{base}[{','.join(map(str, idx))}]"


def _scale(ref) -> float:
    return float(min(max(abs(ref), 1e-3), 1e6))


def build_relaxed_problem(state: SCAState, data: ProblemData, split_weight: float = 0.0,
                          power_weight: float = 0.0) -> ConicProgram:
    """Convex inner approximation of the lifted problem around ``state``.

    Rank-one requirements on the matrix blocks are dropped. The rate and
    total normalized power expressions are kept in ``program.meta``.
    """
    L, K, M = data.L, data.K, data.M
    if state.V.shape != (L, data.nV, data.nV) or state.W.shape != (L, K, data.nW, data.nW):
        raise ValueError("state dimensions do not match problem data")
    if state.beta.shape != (L, K) or state.lam.shape != (L, M) or state.c.shape != (L,):
        raise ValueError("auxiliary dimensions do not match problem data")

    nu = data.split_noise
    Bmm, Bmc = data.B_mm, data.B_mc
    S_ref, Gam_ref, sig_ref, _ = received_terms(data, state.V, state.W)
    p = ConicProgram("relaxed")

    Vb = [p.block(_name("V", l), data.nV, tally="lmi_N") for l in range(L)]
    Wb = [[p.block(_name("W", l, k), data.nW, tally="lmi_M") for k in range(K)] for l in range(L)]

    # scalars are scaled by their reference values for conditioning
    var = {}
    for fname in _LK_FIELDS + ("t",):
        lower = 0.0 if fname in ("a", "d", "ups", "tau") else None
        ref = np.log1p(state.a) if fname == "t" else getattr(state, fname)
        var[fname] = [
            [p.scalar(_name(fname, l, k), lower=lower, scale=_scale(ref[l, k])) for k in range(K)]
            for l in range(L)
        ]
    c = [p.scalar(_name("c", l), scale=_scale(state.c[l])) for l in range(L)]
    lam = [[p.scalar(_name("lam", l, m), lower=0.0, scale=_scale(state.lam[l, m])) for m in range(M)]
           for l in range(L)]
    omega = [[p.scalar(_name("omega", l, m), scale=_scale(state.omega[l, m])) for m in range(M)]
             for l in range(L)]

    # Power budgets
    cp_used = asum(p.trace(Vb[l], data.cp_weight[l]) for l in range(L))
    p.add_ge(1.0 - cp_used, family="cp_power")
    bs_used = []
    for l in range(L):
        for m in range(M):
            used = asum(p.trace(Wb[l][k], data.bs_weight[l, m, k]) for k in range(K))
            bs_used.append(used)
            p.add_ge(1.0 - used, family=_name("bs_power", l, m))

    traces = {}
    for l in range(L):
        for k in range(K):
            for j in range(L):
                for i in range(K):
                    traces[l, k, j, i] = p.trace(Wb[j][i], data.G[l, k, j, i])

    for l in range(L):
        for k in range(K):
            beta = var["beta"][l][k]
            a, b, xi, eps = var["a"][l][k], var["b"][l][k], var["xi"][l][k], var["eps"][l][k]
            d, ups, tau, phi = var["d"][l][k], var["ups"][l][k], var["tau"][l][k], var["phi"][l][k]
            S = traces[l, k, l, k]
            Gam = asum(traces[l, k, j, i] for j in range(L) for i in range(K) if (j, i) != (l, k))
            a0, xi0 = state.a[l, k], state.xi[l, k]
            tau0, beta0 = state.tau[l, k], state.beta[l, k]
            u0, d0 = state.ups[l, k], state.d[l, k]
            tag = f"[{l},{k}]"

            # total received power covers the energy auxiliary
            p.add_ge(S + Gam + 1.0 - b, family="received" + tag)
            p.add_ge(xi - Gam - 1.0 - nu * eps, family="sinr_denominator" + tag)
            p.add_ge(phi - S, family="signal_bound" + tag)
            p.add_ge(2.0 * u0 * ups - u0**2 - phi, family="square_minorizer" + tag)
            bal = lambda x0, y0: math.sqrt(max(x0, AUX_FLOOR) / max(y0, AUX_FLOOR))  # noqa: E731
            p.add_rsoc(S, 1.0, [math.sqrt(a0 / (2.0 * xi0)) * xi, math.sqrt(xi0 / (2.0 * a0)) * a],
                       family="sinr_majorizer" + tag, tally="soc", balance=bal(S_ref[l, k], 1.0))
            p.add_rsoc(b, 1.0 - beta, [math.sqrt(data.energy_min)], family="energy_lmi" + tag, tally="lmi_2",
                       balance=bal(state.b[l, k], 1.0 - beta0))
            p.add_rsoc(eps, beta, [1.0], family="inverse_beta_lmi" + tag, tally="lmi_2",
                       balance=bal(state.eps[l, k], beta0))
            p.add_rsoc(d, Gam + 1.0 + nu * tau, [ups], family="rate_bound_lmi" + tag, tally="lmi_2",
                       balance=bal(d0, Gam_ref[l, k] + 1.0 + nu * tau0))
            p.add_rsoc(1.0, 1.0, [math.sqrt(tau0 / (2.0 * beta0)) * beta, math.sqrt(beta0 / (2.0 * tau0)) * tau],
                       family="tau_beta_majorizer" + tag, tally="soc")
            p.add_exp(var["t"][l][k], 1.0 + a, family="objective_epigraph" + tag, tally="objective")

    for l in range(L):
        taylor = asum(
            (Bmm / LN2) * (math.log1p(state.d[l, k]) + (var["d"][l][k] - state.d[l, k]) / (1.0 + state.d[l, k]))
            for k in range(K)
        )
        p.add_ge(c[l] - taylor, family=_name("log_taylor", l))
        for m in range(M):
            tag = f"[{l},{m}]"
            lam0, om0 = state.lam[l, m], state.omega[l, m]
            sig = p.trace(Vb[l], data.H[l, m, l])
            intf = asum(p.trace(Vb[j], data.H[l, m, j]) for j in range(L) if j != l)
            p.add_ge(omega[l][m] - intf - 1.0, family="fronthaul_denominator" + tag)
            # exponential cone, counted with the scalar constraints
            p.add_exp(c[l] * (LN2 / Bmc), 1.0 + lam[l][m], family="fronthaul_rate" + tag, tally="linear")
            p.add_rsoc(sig, 1.0,
                       [math.sqrt(lam0 / (2.0 * om0)) * omega[l][m], math.sqrt(om0 / (2.0 * lam0)) * lam[l][m]],
                       family="fronthaul_majorizer" + tag, tally="soc",
                       balance=math.sqrt(max(sig_ref[l, m], AUX_FLOOR)))

    rate = asum((Bmm / LN2) * var["t"][l][k] for l in range(L) for k in range(K))
    p.meta["rate"] = rate
    p.meta["power"] = asum([cp_used] + bs_used)
    objective = rate
    if split_weight > 0:
        objective = objective + split_weight * asum(var["beta"][l][k] for l in range(L) for k in range(K))
    if power_weight > 0:
        objective = objective - power_weight * p.meta["power"]
    p.maximize(objective)
    return p


def exact_sinr(data: ProblemData, V, W, beta) -> np.ndarray:
    S, Gam, _, _ = received_terms(data, V, W)
    return S / (Gam + 1.0 + data.split_noise / beta)


def polish_targets(state: SCAState, data: ProblemData, rel_floor: float = 1e-6):
    """Access SINR targets and per-cluster fronthaul SINR targets of a state."""
    gamma = np.minimum(state.a, exact_sinr(data, state.V, state.W, state.beta)) * (1.0 - rel_floor)
    gamma = np.maximum(gamma, 0.0)
    cluster_rate = data.B_mm * np.log2(1.0 + gamma).sum(axis=1)
    return gamma, np.expm1(cluster_rate * LN2 / data.B_mc)


def build_polish_problem(state: SCAState, data: ProblemData, side: str, rel_floor: float = 1e-6) -> ConicProgram:
    """Minimum-power blocks of one side that keep the state's rates.

    The relaxed program's optimal set is often a face rather than a point
    (spare access capacity under a binding fronthaul, or the reverse), and
    interior-point methods return its relative interior, i.e. high-rank
    blocks. With split ratios held, every SINR target is linear in the
    blocks, and minimizing transmit power selects an extreme point.
    ``side`` is ``"fronthaul"`` (blocks V) or ``"access"`` (blocks W).
    """
    if side not in ("fronthaul", "access"):
        raise ValueError(f"unknown side {side!r}")
    L, K, M = data.L, data.K, data.M
    nu = data.split_noise
    gamma, gamma_fh = polish_targets(state, data, rel_floor)
    p = ConicProgram(f"polish_{side}")
    if side == "fronthaul":
        Vb = [p.block(_name("V", l), data.nV, tally="lmi_N") for l in range(L)]
        power = asum(p.trace(Vb[l], data.cp_weight[l]) for l in range(L))
        p.add_ge(1.0 - power, family="cp_power")
        for l in range(L):
            for m in range(M):
                sig = p.trace(Vb[l], data.H[l, m, l])
                intf = asum(p.trace(Vb[j], data.H[l, m, j]) for j in range(L) if j != l)
                p.add_ge(sig - gamma_fh[l] * (intf + 1.0), family=_name("fronthaul_target", l, m))
    else:
        Wb = [[p.block(_name("W", l, k), data.nW, tally="lmi_M") for k in range(K)] for l in range(L)]
        used = []
        for l in range(L):
            for m in range(M):
                u = asum(p.trace(Wb[l][k], data.bs_weight[l, m, k]) for k in range(K))
                used.append(u)
                p.add_ge(1.0 - u, family=_name("bs_power", l, m))
        power = asum(used)
        for l in range(L):
            for k in range(K):
                tr = {(j, i): p.trace(Wb[j][i], data.G[l, k, j, i]) for j in range(L) for i in range(K)}
                S = tr[l, k]
                Gam = asum(v for key, v in tr.items() if key != (l, k))
                beta = float(state.beta[l, k])
                p.add_ge(S - gamma[l, k] * (Gam + 1.0 + nu / beta), family=_name("sinr_target", l, k))
                if data.energy_min > 0:
                    p.add_ge((1.0 - beta) * (S + Gam + 1.0) - data.energy_min, family=_name("energy", l, k))
    p.meta["power"] = power
    p.maximize(-power)
    return p


def tight_state(data: ProblemData, V, W, beta, n: int = 0, a_cap=None) -> SCAState:
    """Exactly feasible state at given blocks and split ratios.

    Blocks are scaled into their power budgets, split ratios are lowered
    where the energy target or a cluster's fronthaul rate requires it, and
    every auxiliary is set to its exact value. The rate auxiliary ``a`` is
    the exact SINR, optionally capped at ``a_cap``, so the objective is the
    sum rate of a point that satisfies every constraint. Solver output
    passes through here so round-off cannot accumulate across iterations.
    """
    L, K, M = data.L, data.K, data.M
    nu = data.split_noise
    V = np.array(V, dtype=complex)
    W = np.array(W, dtype=complex)
    cp = float(sum(np.real(np.trace(data.cp_weight[l] @ V[l])) for l in range(L)))
    if cp > 1.0:
        V /= cp
    for l in range(L):
        used = max(float(sum(np.real(np.trace(data.bs_weight[l, m, k] @ W[l, k])) for k in range(K)))
                   for m in range(M))
        if used > 1.0:
            W[l] /= used
    S, Gam, sig, fh_int = received_terms(data, V, W)
    S = np.maximum(S, 0.0)
    Gam = np.maximum(Gam, 0.0)
    lam = np.maximum(sig, 0.0) / (fh_int + 1.0)
    c = (data.B_mc * np.log2(1.0 + lam)).min(axis=1)
    b = S + Gam + 1.0
    beta = np.clip(np.array(beta, dtype=float), AUX_FLOOR, 1.0 - AUX_FLOOR)
    if data.energy_min > 0:
        beta = np.clip(np.minimum(beta, 1.0 - data.energy_min / b), AUX_FLOOR, 1.0 - AUX_FLOOR)

    def cluster_rate(l, scale):
        return float(np.sum(data.B_mm * np.log2(1.0 + S[l] / (Gam[l] + 1.0 + nu / (scale * beta[l])))))

    for l in range(L):
        if cluster_rate(l, 1.0) <= c[l]:
            continue
        lo, hi = 0.0, 1.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if cluster_rate(l, mid) > c[l]:
                hi = mid
            else:
                lo = mid
        beta[l] = np.maximum(beta[l] * lo, AUX_FLOOR)

    eps = 1.0 / beta
    xi = Gam + 1.0 + nu * eps
    sinr = S / xi
    fl = lambda x: np.maximum(x, AUX_FLOOR)  # noqa: E731
    return SCAState(
        V=V, W=W, beta=beta, a=fl(sinr if a_cap is None else np.minimum(sinr, a_cap)), b=fl(b), xi=fl(xi),
        eps=fl(eps), d=fl(sinr.copy()),
        ups=fl(np.sqrt(S)), tau=fl(eps.copy()), phi=fl(S.copy()), c=fl(c), lam=fl(lam),
        omega=fl(fh_int + 1.0), n=n,
    )


def polish_state(state: SCAState, data: ProblemData, opts: SolveOptions | None = None,
                 rel_floor: float = 1e-6) -> tuple[SCAState, dict]:
    """Power-minimal tie-break of a converged state, one side at a time.

    A side whose program fails keeps its blocks; that happens when the side
    is the binding one, where the blocks are already pinned down. Returns
    the new state and the per-side success flags.
    """
    opts = opts or SolveOptions()
    V, W = state.V.copy(), state.W.copy()
    done = {}
    for side in ("fronthaul", "access"):
        report = conic.solve(build_polish_problem(state, data, side, rel_floor), opts)
        done[side] = report.ok
        if not report.ok:
            log.debug("%s polish failed (%s, %s)", side, report.status, report.backend_status)
            continue
        if side == "fronthaul":
            for l in range(data.L):
                V[l] = _clip_psd(np.asarray(conic.extract_psd_block(report, _name("V", l)), dtype=complex))
        else:
            for l in range(data.L):
                for k in range(data.K):
                    W[l, k] = _clip_psd(np.asarray(conic.extract_psd_block(report, _name("W", l, k)), dtype=complex))
    return tight_state(data, V, W, state.beta, n=state.n), done


def state_point(prog: ConicProgram, state: SCAState, data: ProblemData) -> np.ndarray:
    """Variable vector of ``prog`` corresponding to ``state``.

    Epigraph variables take their implied values.
    """
    L, K, M = data.L, data.K, data.M
    values, blocks = {}, {}
    for l in range(L):
        for k in range(K):
            for fname in _LK_FIELDS:
                values[_name(fname, l, k)] = getattr(state, fname)[l, k]
            values[_name("t", l, k)] = math.log1p(state.a[l, k])
            blocks[_name("W", l, k)] = state.W[l, k]
        values[_name("c", l)] = state.c[l]
        blocks[_name("V", l)] = state.V[l]
        for m in range(M):
            values[_name("lam", l, m)] = state.lam[l, m]
            values[_name("omega", l, m)] = state.omega[l, m]
    return prog.point(values, blocks)


def _clip_psd(X):
    X = 0.5 * (X + X.conj().T)
    lam, U = np.linalg.eigh(X)
    if lam.min(initial=0.0) >= 0.0:
        return X
    lam = np.maximum(lam, 0.0)
    Y = (U * lam) @ U.conj().T
    return 0.5 * (Y + Y.conj().T)


def update_state(state: SCAState, report: conic.SolveReport, data: ProblemData) -> SCAState:
    """New reference point from a solved relaxed program."""
    if not report.ok:
        raise SolverFailure(f"cannot update from status {report.status}", last_state=state)
    return _state_from_point(state, report, data)


def _state_from_point(state: SCAState, report: conic.SolveReport, data: ProblemData) -> SCAState:
    L, K = data.L, data.K
    V = np.stack([_clip_psd(np.asarray(conic.extract_psd_block(report, _name("V", l)), dtype=complex))
                  for l in range(L)])
    W = np.stack([[_clip_psd(np.asarray(conic.extract_psd_block(report, _name("W", l, k)), dtype=complex))
                   for k in range(K)] for l in range(L)])
    beta = np.array([[report.values[_name("beta", l, k)] for k in range(K)] for l in range(L)])
    a = np.array([[report.values[_name("a", l, k)] for k in range(K)] for l in range(L)])
    return tight_state(data, V, W, beta, n=state.n + 1, a_cap=a)


# ---------------------------------------------------------------------------
# iteration


@dataclass
class SCAOptions:
    max_iter: int = 50
    threshold: float = 1e-3
    polish: bool = True
    split_weight: float = 1e-4
    power_weight: float = 1e-4
    accept_tol: float = 1e-6
    starts: int = 1  # initial points tried, see start_profiles
    solve: SolveOptions = field(default_factory=SolveOptions)


@dataclass
class IterationTrace:
    objective: list = field(default_factory=list)  # Mbit/s
    status: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    ms: list = field(default_factory=list)

    def append(self, objective, status, residual, ms):
        self.objective.append(float(objective))
        self.status.append(status)
        self.residual.append(float(residual))
        self.ms.append(float(ms))

    def __len__(self):
        return len(self.objective)

    def csv_rows(self):
        return [
            (n, f"{o:.9g}", s, f"{r:.3e}", f"{t:.3f}")
            for n, (o, s, r, t) in enumerate(zip(self.objective, self.status, self.residual, self.ms))
        ]

    CSV_HEADER = ("iteration", "objective_mbps", "status", "residual", "ms")

    def is_monotone(self, rel_tol: float = 1e-5) -> bool:
        obj = self.objective
        return all(obj[i + 1] >= obj[i] - rel_tol * max(1.0, abs(obj[i])) for i in range(len(obj) - 1))


@dataclass
class SCAResult:
    state: SCAState
    trace: IterationTrace
    converged: bool
    iterations: int
    data: ProblemData
    polished: bool = False
    start: int = 0
    previous: "SCAResult | None" = None  # run this one resumed from

    @property
    def first(self) -> "SCAResult":
        """The run that started from the initial point."""
        res = self
        while res.previous is not None:
            res = res.previous
        return res

    @property
    def objective(self) -> float:
        """Sum rate in Mbit/s of the final (possibly polished) state."""
        return state_objective(self.state, self.data)

    @property
    def V(self) -> np.ndarray:
        """Fronthaul covariance matrices in mW."""
        return self.state.V * self.data.v_unit

    @property
    def W(self) -> np.ndarray:
        return self.state.W * self.data.w_unit

    @property
    def beta(self) -> np.ndarray:
        return self.state.beta


def _perturbed(state: SCAState, rng) -> SCAState:
    kw = {}
    for fname in _LK_FIELDS + ("c", "lam", "omega"):
        arr = getattr(state, fname)
        kw[fname] = arr * (1.0 - 1e-6 * rng.uniform(size=arr.shape))
    kw["beta"] = np.clip(kw["beta"], AUX_FLOOR, 1.0 - AUX_FLOOR)
    return replace(state, **kw)


REJECTED = "rejected"


def _step(state, data, opts: SCAOptions):
    """One safeguarded iteration: ``(new_state, report)``.

    Attempts follow the retry policy (as posed, 10x looser tolerances, then a
    perturbed reference). Any attempt that yields a point, including the
    last iterate of a stalled solve, is mapped to an exactly feasible state
    and accepted when that does not lower the objective; near-converged
    programs can return inexact points that would. When points exist but
    none is accepted, the state is kept and the status becomes
    ``rejected``. Raises ``SolverFailure`` when no attempt yields a point.
    """
    prev = state_objective(state, data)
    floor = prev - opts.accept_tol * max(1.0, abs(prev))
    attempts = [
        (state, opts.solve),
        (state, replace(opts.solve, tol_feas=opts.solve.tol_feas * 10, tol_gap=opts.solve.tol_gap * 10)),
        (_perturbed(state, np.random.default_rng(state.n)), opts.solve),
    ]
    last, solved = None, None
    for ref, sopt in attempts:
        report = conic.solve(build_relaxed_problem(ref, data, opts.split_weight, opts.power_weight), sopt)
        last = report
        if report.x is None:
            log.debug("relaxed solve failed (%s, %s)", report.status, report.backend_status)
            continue
        new = _state_from_point(state, report, data)
        if state_objective(new, data) >= floor:
            return new, report
        log.debug("step rejected (objective %.9g < %.9g)", state_objective(new, data), prev)
        solved = report
    if solved is not None:
        solved.status = REJECTED
        return replace(state, n=state.n + 1), solved
    raise SolverFailure(f"relaxed program failed 3 times (last status {last.status}: {last.backend_status})",
                        last_state=state)


def run_sca(data: ProblemData, state: SCAState, opts: SCAOptions | None = None) -> SCAResult:
    opts = opts or SCAOptions()
    trace = IterationTrace()
    trace.append(state_objective(state, data), "init", 0.0, 0.0)
    converged = False
    prev = trace.objective[-1]
    for _ in range(opts.max_iter):
        t0 = time.perf_counter()
        try:
            state, report = _step(state, data, opts)
        except SolverFailure as exc:
            exc.trace = trace
            raise
        obj = state_objective(state, data)
        trace.append(obj, report.status, report.max_residual, 1e3 * (time.perf_counter() - t0))
        if abs(obj - prev) / max(1.0, abs(prev)) < opts.threshold:
            converged = True
            break
        prev = obj
    polished = False
    if opts.polish:
        state, done = polish_state(state, data, opts.solve)
        polished = any(done.values())
    return SCAResult(state=state, trace=trace, converged=converged, iterations=len(trace) - 1,
                     data=data, polished=polished)


def run_algorithm1(chan: ChannelRealization, config: SystemConfig, opts: SCAOptions | None = None) -> SCAResult:
    """Initialize, then alternate solve/update until the objective settles.

    With ``opts.starts > 1`` the iteration is repeated from each start
    profile and the best final objective wins (ties: earliest start).
    """
    opts = opts or SCAOptions()
    data = full_problem_data(chan, config)
    best, first_error = None, None
    for idx, profile in enumerate(start_profiles(chan.K, opts.starts)):
        try:
            state = initialize_state(chan, config, data, profile)
        except InfeasibleInitError as exc:
            first_error = first_error or exc
            continue
        res = replace(run_sca(data, state, opts), start=idx)
        if best is None or res.objective > best.objective:
            best = res
    if best is None:
        raise first_error
    return best
