import csv
import io

import numpy as np
import pytest

from swiptcran import cli, sca
from swiptcran.sysmodel import SystemConfig

SMALL = SystemConfig(N=2, M=2)


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(cli.format_config(SMALL))
    return str(path)


def test_config_round_trip():
    cfg = SystemConfig(L=1, K=3, E_min=2e-10, P_cp_max_dbm=37.5, pathloss_mm=(70.0, 25.0))
    assert cli.parse_config(cli.format_config(cfg)) == cfg


def test_missing_file_uses_error_path(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.load_config(tmp_path / "absent.ini")
    assert cli.load_config(None) == SystemConfig()


@pytest.mark.parametrize("text, line, fragment", [
    ("[system]\nL = 2\nfoo = 1\n", 3, "unknown key"),
    ("[system]\nL = 2\n\n[powers]\nL = 3\n", 5, "belongs in [system]"),
    ("[system]\nL = 2.5\n", 2, "integer"),
    ("[pathloss]\npathloss_mm = 1, 2, 3\n", 2, "two numbers"),
    ("[energy]\neta = x\n", 2, "eta"),
    ("[system]\nL = 1\n[bogus]\nx = 1\n", 3, "unknown section"),
])
def test_config_errors_name_line(text, line, fragment):
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config(text, "cfg.ini")
    assert f"cfg.ini:{line}" in str(err.value) and fragment in str(err.value)


def test_config_syntax_error_has_line():
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config("[system]\nthis is not ini\n", "cfg.ini")
    assert "cfg.ini:2:" in str(err.value)


def test_config_value_error():
    with pytest.raises(cli.ConfigError):
        cli.parse_config("[energy]\neta = 2.0\n")


def test_main_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[system]\nfoo = 1\n")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "bad.ini:2" in capsys.readouterr().err


def test_run_is_byte_deterministic(tmp_path, small_ini):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["run", "--config", small_ini, "--seed", "1", "--out", str(a)]) == cli.EXIT_OK
    assert cli.main(["run", "--config", small_ini, "--seed", "1", "--out", str(b)]) == cli.EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    row = next(csv.DictReader(io.StringIO(a.read_text())))
    assert row["feasible"] == "1" and float(row["sum_rate_mbps"]) > 0 and row["solve_ms"] == ""


def test_absurd_energy_target_exits_infeasible(tmp_path, capsys):
    path = tmp_path / "e.ini"
    path.write_text(cli.format_config(SMALL.with_(E_min=1.0)))
    assert cli.main(["run", "--config", str(path)]) == cli.EXIT_INFEASIBLE
    assert "energy" in capsys.readouterr().err


def test_solver_failure_exit_code(monkeypatch, small_ini):
    def fail(*args, **kwargs):
        raise sca.SolverFailure("no progress")

    monkeypatch.setattr(cli.rankone, "solve_and_recover", fail)
    assert cli.main(["run", "--config", small_ini]) == cli.EXIT_SOLVER


def test_verify_command(small_ini, capsys):
    assert cli.main(["verify", "--config", small_ini, "--seed", "2"]) == cli.EXIT_OK
    assert "feasible" in capsys.readouterr().out


def test_complexity_default_values():
    est = cli.estimate_complexity(SystemConfig())
    assert (est["delta"], est["z"], est["z1"], est["z2"], est["z3"]) == (111, 164, 1265, 245, 516)
    assert est["iterations_bound"] == pytest.approx(np.sqrt(111) * np.log(1e3))
    assert cli.estimate_complexity(SystemConfig(L=1, M=1, K=1, N=1))["delta"] == 22
    with pytest.raises(ValueError):
        cli.estimate_complexity(SystemConfig(), 1.5)


def test_complexity_command(capsys):
    assert cli.main(["complexity"]) == cli.EXIT_OK
    assert "delta = 111" in capsys.readouterr().out
    assert cli.main(["complexity", "--accuracy", "0"]) == cli.EXIT_CONFIG


def test_sweep_spec_validation():
    for kwargs in (dict(parameter="p_cp_max", values=()), dict(parameter="p_cp_max", values=(2.0, 1.0)),
                   dict(parameter="p_cp_max", values=(1.0,), trials=0), dict(parameter="bogus", values=(1.0,))):
        with pytest.raises(cli.ConfigError):
            cli.SweepSpec(**kwargs)


def test_single_value_sweep_matches_run():
    spec = cli.SweepSpec("p_cp_max", (38.0,), trials=1, config=SMALL, seed_base=5)
    rows = cli.run_sweep(spec)
    rec = cli.run_single(SMALL.with_(P_cp_max_dbm=38.0), 5)
    row = rows[0]
    assert row[4] == cli._num(rec.sum_rate_mbps) and row[5] == cli._vec(rec.fronthaul_mbps)
    assert row[6] == rec.iterations and row[7] == int(rec.rank_one)


def test_sweep_summary_is_mean_of_rows_and_deterministic():
    spec = cli.SweepSpec("p_bs_max", (20.0, 30.0), trials=2, config=SMALL)
    rows = cli.run_sweep(spec)
    assert len(rows) == 2 * 2 + 2
    for value in (20.0, 30.0):
        trial = [float(r[4]) for r in rows if r[1] == cli._num(value) and r[2] != "mean"]
        assert cli.sweep_means(rows)[value] == pytest.approx(np.mean(trial), rel=1e-8)
    text = cli.write_csv(rows, cli.SWEEP_COLUMNS, None)
    assert text == cli.write_csv(cli.run_sweep(spec, jobs=2), cli.SWEEP_COLUMNS, None)


def test_sweep_records_failures_and_continues():
    spec = cli.SweepSpec("e_min", (0.0, 1.0), trials=1, config=SMALL)
    rows = cli.run_sweep(spec)
    statuses = [r[-1] for r in rows if r[2] != "mean"]
    assert statuses[0] == "ok" and statuses[1].startswith("infeasible")


def test_sweep_command_writes_csv(tmp_path, small_ini, capsys):
    out = tmp_path / "s.csv"
    args = ["sweep", "--config", small_ini, "--param", "p_cp_max", "--values", "36,40", "--trials", "1",
            "--out", str(out)]
    assert cli.main(args) == cli.EXIT_OK
    header = out.read_text().splitlines()[0].split(",")
    assert tuple(header) == cli.SWEEP_COLUMNS
    assert "gnuplot" in capsys.readouterr().err


def test_oracle_command(capsys):
    assert cli.main(["oracle", "--trials", "1", "--samples", "1000"]) == cli.EXIT_OK
    assert "surrogates: pass" in capsys.readouterr().out
