"""Command-line experiment harness.

Subcommands: ``run`` (one drop), ``sweep`` (Monte Carlo over a parameter
grid), ``verify`` (independent constraint check of a run), ``complexity``
(interior-point cost model) and ``oracle`` (tiny-instance grid comparison).

Exit codes: 0 success, 2 configuration error, 3 infeasible, 4 solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import oracle, rankone, sca
from .sysmodel import SystemConfig, generate_channels

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4

SECTIONS = {
    "system": ("L", "M", "K", "N", "B_mm", "B_mc", "noise_density_dbm_hz", "split_noise_dbm",
               "cell_radius_m", "cp_distance_m"),
    "powers": ("P_cp_max_dbm", "P_bs_max_dbm"),
    "energy": ("eta", "E_min"),
    "pathloss": ("pathloss_mm", "pathloss_mc"),
}

SWEEP_FIELDS = {"p_cp_max": "P_cp_max_dbm", "p_bs_max": "P_bs_max_dbm", "e_min": "E_min"}
DEFAULT_GRIDS = {
    "p_cp_max": [float(x) for x in range(34, 51, 2)],
    "p_bs_max": [float(x) for x in range(20, 37, 2)],
    "e_min": [0.0, 2e-9, 4e-9, 6e-9, 8e-9],
}
SWEEP_COLUMNS = ("parameter", "value", "trial", "seed", "sum_rate_mbps", "fronthaul_rate_mbps_per_cluster",
                 "iterations", "rank_one", "converged", "solve_ms", "status")
RECORD_COLUMNS = ("seed", "sum_rate_mbps", "fronthaul_rate_mbps_per_cluster", "per_user_rate_mbps",
                  "harvested_mw", "beta", "iterations", "converged", "rank_one", "recovery", "relax_gap",
                  "feasible", "solve_ms")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _line_of(text: str, section: str, key: str | None = None) -> int:
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            if key is None and current == section:
                return n
        elif key is not None and current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return n
    return 0


def _parse_value(name: str, raw: str):
    kind = {f.name: f.type for f in fields(SystemConfig)}[name]
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    if kind == "int":
        value = float(raw)
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(value)
    if kind.startswith("tuple"):
        parts = [p for p in re.split(r"[,\s]+", raw.strip().strip("()")) if p]
        if len(parts) != 2:
            raise ValueError(f"expected two numbers, got {raw!r}")
        return tuple(float(p) for p in parts)
    return float(raw)


def parse_config(text: str, source: str = "<config>") -> SystemConfig:
    """Build a ``SystemConfig`` from INI text; errors name the offending line."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: key outside any [section]") from None
    except configparser.ParsingError as exc:
        line, raw = exc.errors[0]
        raise ConfigError(f"{source}:{line}: cannot parse {raw}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        what = f"key {exc.option!r}" if hasattr(exc, "option") else f"section [{exc.section}]"
        raise ConfigError(f"{source}:{exc.lineno}: duplicate {what}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc.message}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}:{_line_of(text, section)}: unknown section [{section}]")
        for key, raw in cp.items(section):
            where = f"{source}:{_line_of(text, section, key)}"
            if key not in SECTIONS[section]:
                home = [s for s, keys in SECTIONS.items() if key in keys]
                hint = f" (belongs in [{home[0]}])" if home else ""
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]{hint}")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: {key}: {exc}") from None
    try:
        return SystemConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path | None) -> SystemConfig:
    if path is None:
        return SystemConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def format_config(config: SystemConfig) -> str:
    """INI text that parses back to ``config``."""
    out = io.StringIO()
    for section, keys in SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            value = getattr(config, key)
            text = ", ".join(repr(float(x)) for x in value) if isinstance(value, tuple) else repr(value)
            out.write(f"{key} = {text}\n")
        out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# single run


@dataclass(frozen=True)
class RunOptions:
    candidates: int = rankone.DEFAULT_CANDIDATES
    max_iter: int = 50
    threshold: float = 1e-3
    starts: int = 1
    timing: bool = False

    def sca_options(self) -> sca.SCAOptions:
        return sca.SCAOptions(max_iter=self.max_iter, threshold=self.threshold, starts=self.starts)


@dataclass
class RunRecord:
    seed: int
    sum_rate_mbps: float
    fronthaul_mbps: np.ndarray
    per_user_mbps: np.ndarray
    harvested_mw: np.ndarray
    beta: np.ndarray
    iterations: int
    converged: bool
    rank_one: bool
    recovery: str
    relax_gap: float
    feasible: bool
    solve_ms: float | None
    solution: object = None
    verification: object = None


def run_single(config: SystemConfig, seed: int, opts: RunOptions | None = None) -> RunRecord:
    """Relaxed solve, beamformer recovery and independent verification of one drop."""
    opts = opts or RunOptions()
    chan = generate_channels(config, seed)
    t0 = time.perf_counter()
    result, rec = rankone.solve_and_recover(chan, config, opts.sca_options(), count=opts.candidates, seed=seed)
    elapsed = 1e3 * (time.perf_counter() - t0)
    report = oracle.verify_solution(chan, config, rec.best)
    sol = rec.best
    return RunRecord(
        seed=seed, sum_rate_mbps=sol.sum_rate / 1e6, fronthaul_mbps=sol.fronthaul_rate / 1e6,
        per_user_mbps=sol.per_user_rate / 1e6, harvested_mw=sol.harvested, beta=sol.beta,
        iterations=result.iterations, converged=result.converged, rank_one=rec.path == "evd",
        recovery=rec.path, relax_gap=rec.relax_gap, feasible=report.feasible,
        solve_ms=elapsed if opts.timing else None, solution=sol, verification=report,
    )


def _num(x) -> str:
    return f"{float(x):.9g}"


def _vec(a) -> str:
    return ";".join(_num(x) for x in np.ravel(a))


def _ms(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.1f}"


def record_row(rec: RunRecord) -> list:
    return [rec.seed, _num(rec.sum_rate_mbps), _vec(rec.fronthaul_mbps), _vec(rec.per_user_mbps),
            _vec(rec.harvested_mw), _vec(rec.beta), rec.iterations, int(rec.converged), int(rec.rank_one),
            rec.recovery, _num(rec.relax_gap), int(rec.feasible), _ms(rec.solve_ms)]


def write_csv(rows, header, out: str | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    return text


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    trials: int = 1
    config: SystemConfig = SystemConfig()
    seed_base: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.parameter not in SWEEP_FIELDS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}; choose from {sorted(SWEEP_FIELDS)}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if list(self.values) != sorted(self.values):
            raise ConfigError("sweep values must be sorted")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")

    def config_at(self, value: float) -> SystemConfig:
        return self.config.with_(**{SWEEP_FIELDS[self.parameter]: float(value)})


def _sweep_task(args):
    spec, value, trial, opts = args
    seed = spec.seed_base + trial
    try:
        rec = run_single(spec.config_at(value), seed, opts)
        status = "ok" if rec.feasible else "infeasible: verification"
        return (value, trial, seed, rec, status)
    except (sca.InfeasibleInitError, rankone.RecoveryError) as exc:
        return (value, trial, seed, None, f"infeasible: {exc}")
    except sca.SolverFailure as exc:
        return (value, trial, seed, None, f"solver_failure: {exc}")


def run_sweep(spec: SweepSpec, opts: RunOptions | None = None, jobs: int = 1) -> list:
    """One row per (value, trial) followed by one mean row per value."""
    opts = opts or RunOptions()
    tasks = [(spec, v, t, opts) for v in spec.values for t in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    rows, summary = [], []
    for value in spec.values:
        done = []
        for v, trial, seed, rec, status in results:
            if v != value:
                continue
            if rec is None:
                rows.append([spec.parameter, _num(value), trial, seed, "", "", "", "", "", "", status])
                continue
            done.append(rec)
            rows.append([spec.parameter, _num(value), trial, seed, _num(rec.sum_rate_mbps),
                         _vec(rec.fronthaul_mbps), rec.iterations, int(rec.rank_one), int(rec.converged),
                         _ms(rec.solve_ms), status])
        if done:
            ms = [r.solve_ms for r in done]
            summary.append([
                spec.parameter, _num(value), "mean", "",
                _num(np.mean([r.sum_rate_mbps for r in done])),
                _vec(np.mean([r.fronthaul_mbps for r in done], axis=0)),
                _num(np.mean([r.iterations for r in done])),
                _num(np.mean([r.rank_one for r in done])),
                _num(np.mean([r.converged for r in done])),
                _ms(None if None in ms else float(np.mean(ms))),
                f"{len(done)}/{spec.trials}",
            ])
        else:
            summary.append([spec.parameter, _num(value), "mean", "", "", "", "", "", "", "", f"0/{spec.trials}"])
    return rows + summary


def sweep_means(rows) -> dict:
    """Summary mean sum rate per swept value, read back from sweep rows."""
    return {float(r[1]): float(r[4]) for r in rows if r[2] == "mean" and r[4] != ""}


def gnuplot_hint(out: str | None) -> str:
    name = out or "sweep.csv"
    return (f"# gnuplot: set datafile separator ','; "
            f"plot '< grep mean {name}' using 2:5 with linespoints title 'mean sum rate (Mbit/s)'")


# ---------------------------------------------------------------------------
# complexity


def estimate_complexity(config: SystemConfig, accuracy: float = 1e-3) -> dict:
    """Barrier parameter, variable count and per-iteration cost terms of the relaxed program."""
    if not 0.0 < accuracy < 1.0:
        raise ValueError("accuracy must lie in (0, 1)")
    L, M, K, N = config.L, config.M, config.K, config.N
    delta = 14 * K * L + 4 * M * L + M * K * L + N * L + L + 1
    z = N * N * L + K * L * M * M
    z1 = 28 * K * L + 3 * M * L + N**3 * L + M**3 * K * L + L + 1
    z2 = 15 * K * L + 3 * M * L + N * N * L + M * M * K * L + L + 1
    z3 = K * L * ((M + 2) ** 2 + (N + 2) ** 2) + 4 * K * L
    iterations = math.sqrt(delta) * math.log(1.0 / accuracy)
    return {
        "delta": delta, "iterations_bound": iterations, "z": z, "z1": z1, "z2": z2, "z3": z3,
        "total_flops_order": z * iterations * (z1 + z2 * z + z3 + z * z),
    }


# ---------------------------------------------------------------------------
# entry point


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [system], [powers], [energy], [pathloss]")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="CSV output path")
    common.add_argument("--candidates", type=int, default=rankone.DEFAULT_CANDIDATES)
    common.add_argument("--max-iter", type=int, default=50)
    common.add_argument("--threshold", type=float, default=1e-3)
    common.add_argument("--starts", type=int, default=1, help="initial points per run")
    common.add_argument("--timing", action="store_true", help="record wall time (output no longer reproducible)")

    p = argparse.ArgumentParser(prog="swiptcran", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="solve one channel drop")
    sw = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over one parameter")
    sw.add_argument("--param", choices=sorted(SWEEP_FIELDS), default="p_cp_max")
    sw.add_argument("--values", type=_floats, help="comma-separated grid (default depends on --param)")
    sw.add_argument("--trials", type=int, default=5)
    sw.add_argument("--jobs", type=int, default=1)
    sub.add_parser("verify", parents=[common], help="solve one drop and check it independently")
    cx = sub.add_parser("complexity", parents=[common], help="interior-point cost model")
    cx.add_argument("--accuracy", type=float, default=1e-3)
    orc = sub.add_parser("oracle", parents=[common], help="compare against grid search on tiny instances")
    orc.add_argument("--trials", type=int, default=10)
    orc.add_argument("--samples", type=int, default=100_000, help="surrogate property samples")
    return p


def _run_options(args) -> RunOptions:
    return RunOptions(candidates=args.candidates, max_iter=args.max_iter, threshold=args.threshold,
                      starts=args.starts, timing=args.timing)


def _cmd_run(args, config) -> int:
    rec = run_single(config, args.seed, _run_options(args))
    text = write_csv([record_row(rec)], RECORD_COLUMNS, args.out)
    sys.stdout.write(text)
    return EXIT_OK if rec.feasible else EXIT_INFEASIBLE


def _cmd_sweep(args, config) -> int:
    values = args.values or tuple(DEFAULT_GRIDS[args.param])
    spec = SweepSpec(parameter=args.param, values=values, trials=args.trials, config=config,
                     seed_base=args.seed, out=args.out)
    rows = run_sweep(spec, _run_options(args), jobs=args.jobs)
    text = write_csv(rows, SWEEP_COLUMNS, args.out)
    if not args.out:
        sys.stdout.write(text)
    print(gnuplot_hint(args.out), file=sys.stderr)
    return EXIT_OK


def _cmd_verify(args, config) -> int:
    rec = run_single(config, args.seed, _run_options(args))
    rep = rec.verification
    for name, value in rep.residuals.items():
        print(f"{name:10s} {value:.3e} {'ok' if value <= rep.tolerance else 'VIOLATED'}")
    print(f"sum_rate_mbps {rep.sum_rate / 1e6:.6f} (recorded {rec.sum_rate_mbps:.6f})")
    print("feasible" if rep.feasible else "infeasible: " + ", ".join(rep.violations))
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def _cmd_complexity(args, config) -> int:
    try:
        est = estimate_complexity(config, args.accuracy)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key, value in est.items():
        print(f"{key} = {value:.6g}" if isinstance(value, float) else f"{key} = {value}")
    return EXIT_OK


def _cmd_oracle(args, config) -> int:
    rows = []
    for K in (1, 2):
        tiny = config.with_(L=1, M=1, K=K, N=1)
        for trial in range(args.trials):
            seed = args.seed + trial
            chan = generate_channels(tiny, seed)
            grid = oracle.grid_search_tiny(chan, tiny)
            _, rec = rankone.solve_and_recover(chan, tiny, sca.SCAOptions(starts=K + 1), seed=seed)
            rel = (rec.recovered_objective * 1e6 - grid.sum_rate) / grid.sum_rate
            rows.append([K, seed, _num(grid.sum_rate / 1e6), _num(rec.recovered_objective), _num(rel),
                         int(abs(rel) <= 0.02)])
    text = write_csv(rows, ("K", "seed", "grid_mbps", "sca_mbps", "relative_gap", "within_2pct"), args.out)
    sys.stdout.write(text)
    surr = oracle.check_surrogates(args.samples, args.seed)
    print(f"surrogates: {'pass' if surr.passed else 'FAIL'} over {surr.samples} samples"
          + ("" if surr.passed else f", counterexample {surr.counterexample}"))
    ok = surr.passed and all(r[-1] for r in rows)
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "complexity": _cmd_complexity,
            "oracle": _cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sca.InfeasibleInitError, rankone.RecoveryError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except sca.SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
