"""Scenario configuration, channel drops and the physical-layer formulas.

Units at this layer: powers in mW, bandwidths in Hz, rates in bit/s.
Channel gains are amplitude gains (complex), so ``|h v|**2`` is a received
power in mW when ``v`` carries mW**0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

# Path-loss formulas are only meaningful in the far field; closer drops are
# evaluated at this distance.
MIN_DISTANCE_M = 1.0


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(mw)


@dataclass(frozen=True)
class SystemConfig:
    L: int = 2
    M: int = 3
    K: int = 2
    N: int = 8
    B_mm: float = 40e6
    B_mc: float = 20e6
    noise_density_dbm_hz: float = -174.0
    split_noise_dbm: float = -100.0
    eta: float = 0.8
    E_min: float = 0.0
    P_cp_max_dbm: float = 40.0
    P_bs_max_dbm: float = 30.0
    cell_radius_m: float = 40.0
    cp_distance_m: float = 300.0
    pathloss_mm: tuple[float, float] = (69.7, 24.0)
    pathloss_mc: tuple[float, float] = (38.0, 30.0)

    def __post_init__(self):
        for name in ("L", "M", "K", "N"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.B_mm <= 0 or self.B_mc <= 0:
            raise ValueError("bandwidths must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.E_min < 0:
            raise ValueError("E_min must be non-negative")
        if self.cell_radius_m <= 0 or self.cp_distance_m <= 0:
            raise ValueError("cell radius and CP distance must be positive")

    @property
    def noise_density_mw_hz(self) -> float:
        return float(dbm_to_mw(self.noise_density_dbm_hz))

    @property
    def access_noise_mw(self) -> float:
        """Thermal noise over the access band, ``B_mm * delta**2``."""
        return self.B_mm * self.noise_density_mw_hz

    @property
    def fronthaul_noise_mw(self) -> float:
        return self.B_mc * self.noise_density_mw_hz

    @property
    def split_noise_mw(self) -> float:
        return float(dbm_to_mw(self.split_noise_dbm))

    @property
    def P_cp_max(self) -> float:
        return float(dbm_to_mw(self.P_cp_max_dbm))

    @property
    def P_bs_max(self) -> float:
        return float(dbm_to_mw(self.P_bs_max_dbm))

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass
class ChannelRealization:
    """One Monte Carlo drop.

    ``h[l, m]`` is the 1 x N fronthaul row from the CP to BS (l, m).
    ``g[j, l, k]`` is the 1 x M access row from the BSs of cluster j to
    user (l, k).
    """

    h: np.ndarray
    g: np.ndarray
    seed: int | None = None
    geometry: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.h.shape[1]

    @property
    def N(self) -> int:
        return self.h.shape[2]

    @property
    def K(self) -> int:
        return self.g.shape[2]


@dataclass
class BeamformingSolution:
    v: np.ndarray  # (L, N)
    w: np.ndarray  # (L, K, M)
    beta: np.ndarray  # (L, K)
    per_user_rate: np.ndarray  # (L, K) bit/s
    fronthaul_rate: np.ndarray  # (L,) bit/s
    harvested: np.ndarray  # (L, K) mW
    sum_rate: float = 0.0


def pathloss_db(d_m, band: str, config: SystemConfig):
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if band == "access":
        intercept, slope = config.pathloss_mm
    elif band == "fronthaul":
        intercept, slope = config.pathloss_mc
    else:
        raise ValueError(f"unknown band {band!r}")
    out = intercept + slope * np.log10(d)
    return float(out) if out.ndim == 0 else out


def rayleigh(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _uniform_disc(rng, center, radius, n):
    r = radius * np.sqrt(rng.uniform(size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def generate_channels(
    config: SystemConfig,
    seed: int | None = None,
    fading: Callable[[np.random.Generator, tuple], np.ndarray] = rayleigh,
) -> ChannelRealization:
    rng = np.random.default_rng(seed)
    L, M, K, N = config.L, config.M, config.K, config.N
    angles = 2.0 * np.pi * np.arange(L) / L
    centers = config.cp_distance_m * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    bs_xy = np.stack([_uniform_disc(rng, centers[l], config.cell_radius_m, M) for l in range(L)])
    user_xy = np.stack([_uniform_disc(rng, centers[l], config.cell_radius_m, K) for l in range(L)])

    d_fh = np.maximum(np.linalg.norm(bs_xy, axis=-1), MIN_DISTANCE_M)  # (L, M)
    amp_fh = 10.0 ** (-pathloss_db(d_fh, "fronthaul", config) / 20.0)
    h = fading(rng, (L, M, N)) * amp_fh[:, :, None]

    # d_ac[j, m, l, k]: BS (j, m) to user (l, k)
    diff = bs_xy[:, :, None, None, :] - user_xy[None, None, :, :, :]
    d_ac = np.maximum(np.linalg.norm(diff, axis=-1), MIN_DISTANCE_M)
    amp_ac = 10.0 ** (-pathloss_db(d_ac, "access", config) / 20.0)
    amp_ac = np.transpose(amp_ac, (0, 2, 3, 1))  # (j, l, k, m)
    g = fading(rng, (L, L, K, M)) * amp_ac

    geometry = {
        "cluster_centers": centers,
        "bs_xy": bs_xy,
        "user_xy": user_xy,
        "fronthaul_distance": d_fh,
        "access_distance": np.transpose(d_ac, (0, 2, 3, 1)),
    }
    return ChannelRealization(h=h, g=g, seed=seed, geometry=geometry)


def _check_v(chan, v_all):
    v_all = np.asarray(v_all)
    if v_all.shape != (chan.L, chan.N):
        raise ValueError(f"expected fronthaul vectors of shape {(chan.L, chan.N)}, got {v_all.shape}")
    return v_all


def _check_w(chan, w_all):
    w_all = np.asarray(w_all)
    if w_all.shape != (chan.L, chan.K, chan.M):
        raise ValueError(f"expected access vectors of shape {(chan.L, chan.K, chan.M)}, got {w_all.shape}")
    return w_all


def _check_beta(b):
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0) or np.any(b > 1):
        raise ValueError("power splitting ratio must lie in (0, 1]")
    return b


def fronthaul_gains(chan: ChannelRealization, v_all) -> np.ndarray:
    """``P[l, m, j] = |h_lm v_j|**2``."""
    v_all = _check_v(chan, v_all)
    return np.abs(np.einsum("lmn,jn->lmj", chan.h, v_all)) ** 2


def access_gains(chan: ChannelRealization, w_all) -> np.ndarray:
    """``P[l, k, j, i] = |g_jlk w_ji|**2``."""
    w_all = _check_w(chan, w_all)
    return np.abs(np.einsum("jlkm,jim->lkji", chan.g, w_all)) ** 2


def fronthaul_rate_all(chan, v_all, config) -> np.ndarray:
    P = fronthaul_gains(chan, v_all)
    L = chan.L
    own = P[:, :, np.arange(L)].diagonal(axis1=0, axis2=2).T  # (L, M)
    interference = P.sum(axis=2) - own
    return config.B_mc * np.log2(1.0 + own / (interference + config.fronthaul_noise_mw))


def fronthaul_rate(chan, v_all, l: int, m: int, config: SystemConfig) -> float:
    return float(fronthaul_rate_all(chan, v_all, config)[l, m])


def cluster_fronthaul_rate(chan, v_all, l: int, config: SystemConfig) -> float:
    return float(fronthaul_rate_all(chan, v_all, config)[l].min())


def access_sinr_all(chan, w_all, beta, config) -> np.ndarray:
    beta = _check_beta(beta)
    P = access_gains(chan, w_all)
    L, K = chan.L, chan.K
    signal = np.array([[P[l, k, l, k] for k in range(K)] for l in range(L)])
    interference = P.sum(axis=(2, 3)) - signal
    return signal / (interference + config.access_noise_mw + config.split_noise_mw / beta)


def access_sinr(chan, w_all, beta, l: int, k: int, config: SystemConfig) -> float:
    return float(access_sinr_all(chan, w_all, beta, config)[l, k])


def access_rate_all(chan, w_all, beta, config) -> np.ndarray:
    return config.B_mm * np.log2(1.0 + access_sinr_all(chan, w_all, beta, config))


def access_rate(chan, w_all, beta, l: int, k: int, config: SystemConfig) -> float:
    return float(access_rate_all(chan, w_all, beta, config)[l, k])


def harvested_energy_all(chan, w_all, beta, config) -> np.ndarray:
    beta = _check_beta(beta)
    received = access_gains(chan, w_all).sum(axis=(2, 3))
    return config.eta * (1.0 - beta) * (received + config.access_noise_mw)


def harvested_energy(chan, w_all, beta, l: int, k: int, config: SystemConfig) -> float:
    return float(harvested_energy_all(chan, w_all, beta, config)[l, k])


def evaluate_solution(chan, v, w, beta, config) -> BeamformingSolution:
    v = np.asarray(v, dtype=complex)
    w = np.asarray(w, dtype=complex)
    beta = np.asarray(beta, dtype=float)
    rates = access_rate_all(chan, w, beta, config)
    fh = fronthaul_rate_all(chan, v, config).min(axis=1)
    energy = harvested_energy_all(chan, w, beta, config)
    return BeamformingSolution(
        v=v, w=w, beta=beta, per_user_rate=rates, fronthaul_rate=fh,
        harvested=energy, sum_rate=float(rates.sum()),
    )


def _normalize(slack, a, b):
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(scale > 0, slack / np.where(scale > 0, scale, 1.0), 0.0)
    return out


@dataclass
class FeasibilityReport:
    """Signed slacks of every constraint of the original problem.

    Raw slacks carry physical units; ``normalized`` divides each by the
    larger magnitude of its two sides.
    """

    energy: np.ndarray
    cp_power: float
    bs_power: np.ndarray
    fronthaul: np.ndarray
    beta: np.ndarray
    normalized: dict
    tolerance: float

    @property
    def max_violation(self) -> float:
        worst = min(float(np.min(x)) for x in self.normalized.values())
        return max(0.0, -worst)

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tolerance

    def violations(self) -> list[str]:
        out = []
        for name, arr in self.normalized.items():
            arr = np.atleast_1d(arr)
            for idx in zip(*np.nonzero(arr < -self.tolerance)):
                out.append(f"{name}{list(map(int, idx))}")
        return out


def check_feasible(chan, solution: BeamformingSolution, config, tolerance: float = 1e-6) -> FeasibilityReport:
    v = _check_v(chan, solution.v)
    w = _check_w(chan, solution.w)
    beta = np.asarray(solution.beta, dtype=float)
    beta_slack = np.minimum(beta, 1.0 - beta)
    # formulas need beta in (0, 1]; report range violations instead of raising
    b_eval = np.clip(beta, 1e-300, 1.0)

    E = harvested_energy_all(chan, w, b_eval, config)
    energy = E - config.E_min
    used_cp = float(np.sum(np.abs(v) ** 2))
    cp = config.P_cp_max - used_cp
    used_bs = np.sum(np.abs(w) ** 2, axis=1)  # (L, M)
    bs = config.P_bs_max - used_bs
    R_fh = fronthaul_rate_all(chan, v, config).min(axis=1)
    R_ac = access_rate_all(chan, w, b_eval, config).sum(axis=1)
    fh = R_fh - R_ac

    normalized = {
        "energy": _normalize(energy, E, config.E_min),
        "cp_power": _normalize(np.array(cp), used_cp, config.P_cp_max),
        "bs_power": _normalize(bs, used_bs, config.P_bs_max),
        "fronthaul": _normalize(fh, R_fh, R_ac),
        "beta": beta_slack,
    }
    return FeasibilityReport(
        energy=energy, cp_power=cp, bs_power=bs, fronthaul=fh, beta=beta_slack,
        normalized=normalized, tolerance=tolerance,
    )
