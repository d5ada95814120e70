"""Beamforming and power splitting for SWIPT cloud radio access networks with multicast fronthaul."""
from .sysmodel import BeamformingSolution, ChannelRealization, SystemConfig, check_feasible, generate_channels
from .sca import SCAOptions, SCAResult, run_algorithm1
from .rankone import RandomizationResult, recover_solution, solve_and_recover
from .oracle import GridSpec, check_surrogates, grid_search_tiny, verify_solution

__all__ = [
    "BeamformingSolution", "ChannelRealization", "SystemConfig", "check_feasible", "generate_channels",
    "SCAOptions", "SCAResult", "run_algorithm1",
    "RandomizationResult", "recover_solution", "solve_and_recover",
    "GridSpec", "check_surrogates", "grid_search_tiny", "verify_solution",
]
