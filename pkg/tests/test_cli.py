import json

from ofcsim.cli import main

from conftest import SCEN


def test_simulate_writes_outputs(tmp_path, capsys):
    rc = main(["simulate", "--scenario", str(SCEN / "two_bus.toml"), "--out", str(tmp_path),
               "--duration", "2", "--controller", "local"])
    assert rc == 0
    assert (tmp_path / "trace.csv").exists()
    assert json.loads((tmp_path / "metrics.json").read_text())["mode"] == "local"
    assert "mode=local" in capsys.readouterr().out


def test_compare(tmp_path, capsys):
    rc = main(["compare", "--scenario", str(SCEN / "two_bus.toml"), "--out", str(tmp_path),
               "--duration", "1"])
    assert rc == 0
    assert (tmp_path / "comparison.json").exists()
    assert "line 1-2" in capsys.readouterr().out


def test_continuous(tmp_path, capsys):
    series = tmp_path / "s.csv"
    series.write_text("time_s,power_MW\n0,0\n2,0.4\n")
    rc = main(["continuous", "--scenario", str(SCEN / "two_bus.toml"), "--series", str(series),
               "--bus", "2", "--out", str(tmp_path / "o"), "--duration", "2"])
    assert rc == 0
    assert "rms ratio" in capsys.readouterr().out


def test_verify_projection(capsys):
    assert main(["verify", "--suite", "projection"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_missing_file_exit_2(tmp_path, capsys):
    rc = main(["simulate", "--scenario", str(tmp_path / "nope.toml"), "--out", str(tmp_path)])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_invalid_scenario_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text((SCEN / "two_bus.toml").read_text().replace("beta = 12.0", "beta = 0.0"))
    assert main(["simulate", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "filter cutoff must be positive" in capsys.readouterr().err


def test_bad_override_exit_2(tmp_path):
    rc = main(["simulate", "--scenario", str(SCEN / "two_bus.toml"), "--out", str(tmp_path),
               "--dt", "-1"])
    assert rc == 2
