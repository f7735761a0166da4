import json
import subprocess
import sys

import pytest

from firmfield import CobbDouglas, ValidationError, load_scenario
from firmfield.cli import ENV_OUT, main
from firmfield.scenario import bundled_scenarios

FAST_SIM = ["--override", "simulate.n_firms=20000", "--override", "simulate.k0_rel=[0.5]"]


def _summary(path):
    return json.loads(path.read_text())


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    assert {"cobb_douglas_d1", "cobb_douglas_d2", "ces_d2"} <= set(names)
    for name in names:
        sc = load_scenario(name)
        assert sc.economy.d == len(sc.price_vector())


def test_check_exits_zero(tmp_path, capsys):
    assert main(["check", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
    rows = _summary(tmp_path / "check" / "check.json")["checks"]
    assert rows and all(r["passed"] for r in rows)


def test_box_violation_exits_three(tmp_path, capsys):
    code = main(["equilibrium", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path),
                 "--override", "equilibrium.eps_box=0.99"])
    assert code == 3
    assert "box" in capsys.readouterr().err


def test_convergence_failure_writes_trace(tmp_path):
    code = main(["equilibrium", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path),
                 "--override", "equilibrium.stage_budget=2"])
    assert code == 3
    lines = (tmp_path / "equilibrium" / "trace.csv").read_text().splitlines()
    assert lines[0] == "lambda,iter,gap,w_1" and len(lines) > 1


@pytest.mark.parametrize("rho", [0.05, 0.08])
def test_rho_override_moves_kappa(tmp_path, rho):
    assert main(["value", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path),
                 "--override", f"params.rho={rho}"]) == 0
    ks = _summary(tmp_path / "value" / "summary.json")["kappa_star"]
    cd = CobbDouglas(A=1.0, alpha=0.3, beta=(0.4,))
    assert ks == pytest.approx(cd.kappa_closed_form(rho, 0.1, [1.0]), rel=1e-10)


def test_unknown_key_exits_two(tmp_path, capsys):
    code = main(["value", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path),
                 "--override", "params.rhoo=0.1"])
    assert code == 2
    assert "params.rhoo" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text('[production]\nalpha = 0.3\nbeta = [0.4]\n[params]\nrho = 0.05\nnu = 0.1\n'
                   '[entry]\na1 = 0.2\na2 = 0.8\n[grid]\nspacing = 3\n')
    assert main(["value", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "grid.spacing" in capsys.readouterr().err


@pytest.mark.parametrize("override", ["grid.n_points=50", "equilibrium.eps_box=1.5", "equilibrium.tol=0",
                                      "params.rho=-1", "prices.w=[1.0, 2.0]", "production.variant=\"leontief\""])
def test_validation_before_solving(override):
    with pytest.raises(ValidationError):
        load_scenario("cobb_douglas_d1", [override])


def test_env_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    monkeypatch.chdir(tmp_path)
    assert main(["density", "--scenario", "cobb_douglas_d1"]) == 0
    assert (tmp_path / "env" / "density" / "density.csv").is_file()


def test_json_format(tmp_path):
    assert main(["value", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path), "--format", "json"]) == 0
    data = _summary(tmp_path / "value" / "value.json")
    assert set(data) == {"k", "u", "du", "b", "chi"}
    assert not (tmp_path / "value" / "value.csv").exists()


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--scenario", "cobb_douglas_d1", "--out", str(out)] + FAST_SIM) == 0
    files = sorted(p.name for p in (a / "simulate").glob("*.csv"))
    assert "histogram.csv" in files and "trajectory_0.csv" in files
    for name in files:
        assert (a / "simulate" / name).read_bytes() == (b / "simulate" / name).read_bytes()
    meta = _summary(a / "simulate" / "simulate.json")
    assert meta["generator"] == "PCG64" and meta["seed"] == 20240917


def test_csv_round_trips_floats(tmp_path):
    assert main(["value", "--scenario", "cobb_douglas_d1", "--out", str(tmp_path)]) == 0
    row = (tmp_path / "value" / "value.csv").read_text().splitlines()[1].split(",")
    sc = load_scenario("cobb_douglas_d1")
    from firmfield import solve_value
    v = solve_value(sc.economy, sc.price_vector(), sc.grid)
    assert float(row[0]) == v.grid[0] and float(row[1]) == v.u[0]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "firmfield.cli", "density", "--scenario", "cobb_douglas_d1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "total mass" in proc.stdout
