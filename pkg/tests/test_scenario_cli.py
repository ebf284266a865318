import re
from pathlib import Path

import numpy as np
import pytest

from stokestrack.cli import main, nonincreasing_within
from stokestrack.scenario import Scenario, ScenarioError

ROOT = Path(__file__).resolve().parents[1]

SMALL = """
[geometry]
solid_nodes = [12, 24]
outer_nodes = [24, 48]

[solver]
solid_sources = 120
outer_sources = 500

[control]
n_basis = 12
grid_counts = [2, 2, 2]
grid_lows = [-0.35, -0.35, -0.05]
grid_highs = [0.35, 0.35, 0.05]

[run]
trajectory = "circle"
T = 0.2
dt = 0.05
radius = 0.3
period = 1.0
max_position_error = 1.0
resistance_poses = [[0.0, 0.0, 0.0]]
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_shipped_scenarios_load():
    for path in sorted((ROOT / "scenarios").glob("*.toml")):
        sc = Scenario.load(path)
        assert sc.digest() == Scenario.load(path).digest()


def test_defaults_round_trip():
    sc = Scenario.from_dict({})
    assert Scenario.from_dict(sc.to_dict()).echo() == sc.echo()


def test_int_coerced_to_float():
    sc = Scenario.from_dict({"geometry": {"mass": 2}})
    assert isinstance(sc.geometry.mass, float)


@pytest.mark.parametrize("data, field", [
    ({"geometry": {"delta": -0.1}}, "geometry.delta"),
    ({"geometry": {"gamma_cap": 4.0}}, "geometry.gamma_cap"),
    ({"geometry": {"colour": 1}}, "geometry.colour"),
    ({"solver": {"inner_factor": 1.5}}, "solver.inner_factor"),
    ({"control": {"n_basis": 3}}, "control.n_basis"),
    ({"control": {"bounds": {"v_max": 0.0}}}, "control.bounds.v_max"),
    ({"run": {"mode": "slow"}}, "run.mode"),
    ({"run": {"dt": "small"}}, "run.dt"),
    ({"run": {"seed": 1.5}}, "run.seed"),
    ({"extra": {}}, "extra"),
])
def test_validation_names_field(data, field):
    with pytest.raises(ScenarioError, match=re.escape(field)):
        Scenario.from_dict(data)


def test_with_run_overrides(small):
    sc = Scenario.load(small).with_run(mode="full", seed=3)
    assert sc.run.mode == "full" and sc.run.seed == 3
    with pytest.raises(ScenarioError):
        Scenario.load(small).with_run(mode="bogus")


def test_nonincreasing_within():
    assert nonincreasing_within([3, 2, 2 + 1e-13, 1], 1e-12)
    assert not nonincreasing_within([3, 2, 2.1], 1e-12)


def test_cli_bad_scenario_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[geometry]\ndelta = -1.0\n")
    assert main(["track", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "geometry.delta" in capsys.readouterr().err
    broken = tmp_path / "broken.toml"
    broken.write_text("[geometry\n")
    assert main(["track", "--scenario", str(broken), "--out", str(tmp_path / "o")]) == 2
    assert main(["track", "--scenario", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "o")]) == 2


def test_cli_track_deterministic(small, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["track", "--scenario", str(small), "--out", str(a)]) == 0
    out = capsys.readouterr().out
    assert "sup_err_h=" in out and "status=0" in out
    assert main(["track", "--scenario", str(small), "--out", str(b)]) == 0
    assert (a / "track.csv").read_bytes() == (b / "track.csv").read_bytes()
    lines = (a / "track.csv").read_text().splitlines()
    assert lines[0] == "# stokestrack track"
    assert lines[1].startswith("# scenario_sha256=") and len(lines[1].split("=")[1]) == 64
    assert lines[2] == "# mode=fast seed=0"
    assert lines[4].startswith("t,h1,h2,h3")
    log = (a / "solver_log.csv").read_text().splitlines()
    assert "residual,condition" in log and len(log) > 10


def test_cli_fit_then_track_from_law(small, tmp_path, capsys):
    out = tmp_path / "fit"
    assert main(["fit-controls", "--scenario", str(small), "--out", str(out)]) == 0
    assert (out / "law.npz").exists() and (out / "fit_report.csv").exists() and (out / "density.csv").exists()
    assert main(["track", "--scenario", str(small), "--out", str(tmp_path / "t"), "--law", str(out / "law.npz")]) == 0
    assert main(["track", "--scenario", str(small), "--out", str(tmp_path / "u")]) == 0
    assert (tmp_path / "t" / "track.csv").read_bytes() == (tmp_path / "u" / "track.csv").read_bytes()


def test_cli_check_failure_exit_1(small, tmp_path, capsys):
    small.write_text(small.read_text().replace("max_position_error = 1.0", "max_position_error = 1e-30"))
    assert main(["track", "--scenario", str(small), "--out", str(tmp_path / "o")]) == 1
    captured = capsys.readouterr()
    assert "check failed" in captured.err and "status=1" in captured.out
    assert (tmp_path / "o" / "track.csv").exists()


def test_cli_reference_outside_grid_is_error(small, tmp_path, capsys):
    small.write_text(small.read_text().replace("radius = 0.3", "radius = 0.6"))
    assert main(["track", "--scenario", str(small), "--out", str(tmp_path / "o")]) == 2
    assert "grid" in capsys.readouterr().err


def test_cli_free_run_and_switch_off(small, tmp_path, capsys):
    assert main(["free-run", "--scenario", str(small), "--out", str(tmp_path / "f")]) == 0
    assert "energy_decreasing=1" in capsys.readouterr().out
    assert main(["switch-off", "--scenario", str(small), "--out", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    ratio = float(re.search(r"ratio=(\S+)", out).group(1))
    assert ratio <= 1e-10


def test_cli_resistance(small, tmp_path, capsys):
    assert main(["resistance", "--scenario", str(small), "--out", str(tmp_path / "r"), "--seed", "4"]) == 0
    text = (tmp_path / "r" / "resistance.csv").read_text()
    assert "# mode=fast seed=4" in text
    assert "max_asymmetry=" in capsys.readouterr().out


def test_cli_convergence(small, tmp_path, capsys):
    assert main(["convergence", "--scenario", str(small), "--out", str(tmp_path / "c")]) == 0
    rows = (tmp_path / "c" / "convergence.csv").read_text().splitlines()
    assert rows[4] == "dt,sup_err_h,ratio" and len(rows) == 4 + 1 + 3
