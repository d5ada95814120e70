"""Independent ground truth for the optimizer.

* ``grid_search_tiny``: exhaustive search on instances small enough that the
  beamformer directions are fixed and only magnitudes and split ratios remain.
* ``verify_solution``: constraint and rate recomputation from raw vectors with
  plain loops, sharing no code with the model or the solver.
* ``check_surrogates``: random-sample property tests of the convex bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sca
from .sysmodel import BeamformingSolution, ChannelRealization, SystemConfig

MAX_GRID_POINTS = 10**8


class GridTooLarge(ValueError):
    """Instance or grid exceeds what exhaustive search is allowed to cover."""


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class GridSpec:
    beta_points: int = 10_000
    power_points: int = 41
    max_dims: int = 3

    def __post_init__(self):
        if self.beta_points < 2 or self.power_points < 2:
            raise ValueError("grid resolutions must be at least 2")

    def beta_grid(self) -> np.ndarray:
        """Interior points of (0, 1) plus the endpoint 1."""
        return np.arange(1, self.beta_points + 1) / self.beta_points

    def power_grid(self, p_max: float) -> np.ndarray:
        return np.linspace(0.0, p_max, self.power_points)


@dataclass
class GridResult:
    sum_rate: float  # bit/s
    powers: np.ndarray  # per-user access powers, mW
    beta: np.ndarray
    v: np.ndarray
    w: np.ndarray
    points: int


def _tiny_directions(chan: ChannelRealization):
    L, M, K, N = chan.L, chan.M, chan.K, chan.N
    if L != 1 or not (M == 1 or N == 1) or not (M == 1 or K == 1):
        raise GridTooLarge(f"instance L={L}, M={M}, K={K}, N={N} has no scalar reduction")
    if M == 1:
        h = chan.h[0, 0]
        v_dir = h.conj() / max(np.linalg.norm(h), 1e-300)
    else:
        v_dir = np.ones(1, dtype=complex)
    w_dir = np.empty((K, M), dtype=complex)
    for k in range(K):
        g = chan.g[0, 0, k]
        w_dir[k] = g.conj() / max(np.linalg.norm(g), 1e-300) if M > 1 else 1.0
    return v_dir[None, :], w_dir


def grid_search_tiny(chan: ChannelRealization, config: SystemConfig, spec: GridSpec | None = None) -> GridResult:
    """Best grid point of the sum-rate problem on a single-cluster instance.

    The fronthaul beamformer uses the full CP budget, which is optimal with
    one cluster. Access powers are gridded jointly under the per-BS budget.
    Split ratios only couple through the fronthaul cap and every rate grows
    with its own ratio, so the product grid over users' ratios is searched
    exactly by sorting.
    """
    spec = spec or GridSpec()
    K = chan.K
    dims = K + 1
    points = spec.power_points**K * spec.beta_points
    if dims > spec.max_dims:
        raise GridTooLarge(f"{dims} free scalars exceed the limit of {spec.max_dims}")
    if points > MAX_GRID_POINTS:
        raise GridTooLarge(f"{points} grid points exceed {MAX_GRID_POINTS}")
    v_dir, w_dir = _tiny_directions(chan)
    v = v_dir * math.sqrt(config.P_cp_max)
    n_fh, n_ac = config.fronthaul_noise_mw, config.access_noise_mw
    r_fh = min(
        config.B_mc * math.log2(1.0 + abs(np.dot(chan.h[0, m], v[0])) ** 2 / n_fh) for m in range(chan.M)
    )
    gains = np.abs(np.einsum("km,im->ki", chan.g[0, 0], w_dir)) ** 2  # user k, stream i (unit power)

    betas = spec.beta_grid()
    grids = np.meshgrid(*[spec.power_grid(config.P_bs_max)] * K, indexing="ij")
    P = np.stack([g.ravel() for g in grids], axis=1)  # (n, K)
    P = P[P.sum(axis=1) <= config.P_bs_max * (1 + 1e-12)]

    best = (-1.0, None, None)
    for p in P:
        rx = gains @ p  # total received per user
        sig = np.diag(gains) * p
        # rate[k, b] on the beta grid; infeasible energy entries get -inf
        energy = config.eta * (1.0 - betas[None, :]) * (rx[:, None] + n_ac)
        sinr = sig[:, None] / (rx[:, None] - sig[:, None] + n_ac + config.split_noise_mw / betas[None, :])
        rate = config.B_mm * np.log2(1.0 + sinr)
        rate = np.where(energy >= config.E_min, rate, -np.inf)
        if K == 1:
            ok = rate[0] <= r_fh
            if not ok.any():
                continue
            idx = int(np.argmax(np.where(ok, rate[0], -np.inf)))
            val, choice = rate[0, idx], (idx,)
        else:
            val, choice = _best_pair(rate[0], rate[1], r_fh)
            if choice is None:
                continue
        if val > best[0]:
            best = (float(val), p.copy(), np.array([betas[i] for i in choice]))
    if best[1] is None:
        raise ValueError("no feasible grid point")
    val, p, beta = best
    w = (w_dir * np.sqrt(p)[:, None])[None]
    return GridResult(sum_rate=val, powers=p, beta=beta[None, :], v=v, w=w, points=points)


def _best_pair(r1: np.ndarray, r2: np.ndarray, cap: float):
    """Max of ``r1[i] + r2[j]`` subject to the sum staying below ``cap``."""
    order = np.argsort(r2, kind="stable")
    s2 = r2[order]
    j = np.searchsorted(s2, cap - r1, side="right") - 1
    valid = (j >= 0) & np.isfinite(r1)
    if not valid.any():
        return -np.inf, None
    tot = np.where(valid, r1 + s2[np.maximum(j, 0)], -np.inf)
    tot = np.where(np.isfinite(tot), tot, -np.inf)
    i = int(np.argmax(tot))
    if not np.isfinite(tot[i]):
        return -np.inf, None
    return float(tot[i]), (i, int(order[j[i]]))


# ---------------------------------------------------------------------------
# solution verification


@dataclass
class VerificationReport:
    feasible: bool
    residuals: dict = field(default_factory=dict)  # constraint name -> worst normalized violation
    violations: list = field(default_factory=list)
    per_user_rate: np.ndarray | None = None  # bit/s
    fronthaul_rate: np.ndarray | None = None  # bit/s per cluster
    harvested: np.ndarray | None = None  # mW
    sum_rate: float = 0.0
    rate_mismatch: float = 0.0  # relative gap to the solution's own bookkeeping
    tolerance: float = 1e-6


def _rel(slack: float, a: float, b: float) -> float:
    """Violation of ``slack >= 0`` relative to the larger side."""
    scale = max(abs(a), abs(b))
    return 0.0 if slack >= 0 or scale == 0 else -slack / scale


def _inner(x, y) -> complex:
    return sum(complex(a) * complex(b) for a, b in zip(x, y))


def verify_solution(
    chan: ChannelRealization, config: SystemConfig, solution: BeamformingSolution, tolerance: float = 1e-6
) -> VerificationReport:
    """Recompute every constraint and rate from the raw beamformers."""
    L, M, K = chan.L, chan.M, chan.K
    v, w = np.asarray(solution.v), np.asarray(solution.w)
    beta = np.asarray(solution.beta, dtype=float)
    n_fh, n_ac, n_sp = config.fronthaul_noise_mw, config.access_noise_mw, config.split_noise_mw
    res = {"beta": 0.0, "cp_power": 0.0, "bs_power": 0.0, "energy": 0.0, "fronthaul": 0.0}

    for l in range(L):
        for k in range(K):
            b = float(beta[l, k])
            res["beta"] = max(res["beta"], -min(b, 1.0 - b))

    used_cp = sum(abs(complex(x)) ** 2 for l in range(L) for x in v[l])
    res["cp_power"] = _rel(config.P_cp_max - used_cp, used_cp, config.P_cp_max)
    for l in range(L):
        for m in range(M):
            used = sum(abs(complex(w[l, k, m])) ** 2 for k in range(K))
            res["bs_power"] = max(res["bs_power"], _rel(config.P_bs_max - used, used, config.P_bs_max))

    rates = np.zeros((L, K))
    harvested = np.zeros((L, K))
    for l in range(L):
        for k in range(K):
            received = [[abs(_inner(chan.g[j, l, k], w[j, i])) ** 2 for i in range(K)] for j in range(L)]
            total = sum(sum(row) for row in received)
            desired = received[l][k]
            b = min(max(float(beta[l, k]), 1e-300), 1.0)
            sinr = b * desired / (b * (total - desired + n_ac) + n_sp)
            rates[l, k] = config.B_mm * math.log2(1.0 + sinr)
            harvested[l, k] = config.eta * (1.0 - b) * (total + n_ac)
            res["energy"] = max(res["energy"], _rel(harvested[l, k] - config.E_min, harvested[l, k], config.E_min))

    fh = np.zeros(L)
    for l in range(L):
        worst = math.inf
        for m in range(M):
            gains = [abs(_inner(chan.h[l, m], v[j])) ** 2 for j in range(L)]
            sinr = gains[l] / (sum(gains) - gains[l] + n_fh)
            worst = min(worst, config.B_mc * math.log2(1.0 + sinr))
        fh[l] = worst
        access = float(rates[l].sum())
        res["fronthaul"] = max(res["fronthaul"], _rel(worst - access, worst, access))

    total_rate = float(rates.sum())
    mismatch = abs(total_rate - solution.sum_rate) / max(1.0, abs(total_rate))
    violations = [name for name, r in res.items() if r > tolerance]
    return VerificationReport(
        feasible=not violations, residuals=res, violations=violations, per_user_rate=rates,
        fronthaul_rate=fh, harvested=harvested, sum_rate=total_rate, rate_mismatch=mismatch,
        tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# surrogate properties


@dataclass
class SurrogateReport:
    passed: bool
    samples: int
    counterexample: dict | None = None
    max_reference_error: float = 0.0


def check_surrogates(samples: int, seed: int | None = 0, chunk: int = 100_000) -> SurrogateReport:
    """Property test of the product majorizer, square minorizer and log tangent.

    The product majorizer is exercised in its three roles (rate times
    denominator, inverse split ratio times split ratio, fronthaul SINR times
    its denominator); they share one formula but are sampled independently.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    done = 0
    ref_err = 0.0
    while done < samples:
        n = min(chunk, samples - done)

        def pos():
            return np.exp(rng.uniform(-8.0, 8.0, n))

        checks = {}
        for name in ("rate_product", "split_product", "fronthaul_product"):
            x, y, x0, y0 = pos(), pos(), pos(), pos()
            lhs = sca.bilinear_majorizer(x, y, x0, y0)
            checks[name] = (lhs - x * y >= -1e-12 * np.maximum(lhs, x * y), dict(x=x, y=y, x0=x0, y0=y0))
            ref = sca.bilinear_majorizer(x0, y0, x0, y0)
            ref_err = max(ref_err, float(np.max(np.abs(ref - x0 * y0) / (x0 * y0))))
        u, u0 = rng.normal(0, 100, n), rng.normal(0, 100, n)
        low = sca.square_minorizer(u, u0)
        checks["square_minorizer"] = (low <= u * u + 1e-12 * (u * u + u0**2), dict(u=u, u0=u0))
        at_ref = sca.square_minorizer(u0, u0)
        ref_err = max(ref_err, float(np.max(np.abs(at_ref - u0 * u0) / np.maximum(u0 * u0, 1e-300))))
        d = np.expm1(rng.uniform(-10.0, 10.0, n))
        d0 = np.expm1(rng.uniform(-10.0, 10.0, n))
        tang = sca.log_taylor_upper(d, d0)
        checks["log_tangent"] = (np.log1p(d) <= tang + 1e-12 * np.maximum(1.0, np.abs(tang)), dict(d=d, d0=d0))
        ref_err = max(ref_err, float(np.max(np.abs(sca.log_taylor_upper(d0, d0) - np.log1p(d0))
                                            / np.maximum(1.0, np.abs(np.log1p(d0))))))

        for name, (ok, data) in checks.items():
            if not ok.all():
                i = int(np.argmin(ok))
                return SurrogateReport(
                    passed=False, samples=done + i + 1,
                    counterexample={"surrogate": name, **{k: float(val[i]) for k, val in data.items()}},
                    max_reference_error=ref_err,
                )
        done += n
    return SurrogateReport(passed=True, samples=done, max_reference_error=ref_err)
