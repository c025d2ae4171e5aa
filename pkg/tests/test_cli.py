import json

import numpy as np
import pytest

from measurefw.artifacts import RunManifest, read_influence_grid, read_measure, read_trace
from measurefw.cli import EXIT_INPUT, EXIT_NOT_CERTIFIED, EXIT_OK, EXIT_PRECONDITION, main
from measurefw.l1 import build_grid
from measurefw.measure import uniform_on
from measurefw.scenario import builtin_scenario, load_scenario, scenario_to_json

FAST = ["--threads", "1"]


@pytest.fixture
def scenario_file(tmp_path):
    """Fixture to write the three-point scenario to disk."""
    path = tmp_path / "tri.json"
    path.write_text(json.dumps(scenario_to_json(builtin_scenario("three-point"))))
    return path


@pytest.fixture
def two_point_run(tmp_path):
    """Fixture to solve the two-point scenario and return the output directory."""
    out = tmp_path / "run"
    assert main([*FAST, "solve", "--scenario", "builtin:two-point", "--iters", "30", "--out", str(out)]) == EXIT_OK
    return out


def test_solve_writes_outputs(two_point_run) -> None:
    """Test that solve writes the measure, the trace and the manifest."""
    mu = read_measure(two_point_run / "measure.json")
    assert mu.budget == 1.0
    rows = read_trace(two_point_run / "trace.csv")
    assert [r["k"] for r in rows] == list(range(len(rows)))
    assert rows[-1]["h_star"] >= -1e-8
    manifest = RunManifest.read(two_point_run)
    assert manifest.scenario == "builtin:two-point"
    assert manifest.seed == 0
    assert manifest.config["max_outer_iters"] == 30
    assert manifest.command.startswith("measure-fw --threads 1 solve")
    assert not (two_point_run / "certificate.json").exists()


def test_solve_is_reproducible(tmp_path, scenario_file) -> None:
    """Test two runs with the same inputs produce the same measure and configuration."""
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        argv = [*FAST, "solve", "--scenario", str(scenario_file), "--iters", "5", "--seed", "2", "--out", str(out)]
        assert main(argv) == EXIT_OK
    a, b = (read_measure(out / "measure.json") for out in outs)
    np.testing.assert_array_equal(a.locations, b.locations)
    assert RunManifest.read(outs[0]).config == RunManifest.read(outs[1]).config


def test_solve_l1grid_support(tmp_path, capsys) -> None:
    """Test the grid solver writes a measure on demand-grid vertices and its certificate."""
    scenario = tmp_path / "tri-l1.json"
    assert main(["scenario", "three-point", "--norm", "l1", "--out", str(scenario)]) == EXIT_OK
    out = tmp_path / "grid"
    assert main([*FAST, "solve", "--scenario", str(scenario), "--algo", "l1grid", "--iters", "50", "--out", str(out)]) == EXIT_OK
    mu = read_measure(out / "measure.json")
    grid = build_grid(load_scenario(scenario).eta.points)
    assert np.all(grid.is_vertex(mu.locations))
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["tolerance"] == 1e-6
    assert cert["min_h"] >= -1e-4
    assert cert["support_residual"] <= 1e-4
    assert f", {cert['verdict']} -> " in capsys.readouterr().out


def test_solve_missing_scenario(tmp_path, capsys) -> None:
    """Test a missing scenario file exits 2 with a message."""
    code = main([*FAST, "solve", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT
    assert "cannot read scenario file" in capsys.readouterr().err


def test_solve_invalid_iterations(tmp_path) -> None:
    """Test invalid solver settings are input errors."""
    assert main([*FAST, "solve", "--scenario", "builtin:two-point", "--iters", "0", "--out", str(tmp_path)]) == EXIT_INPUT


def test_solve_grid_on_continuous_law(tmp_path) -> None:
    """Test a precondition violation exits 3."""
    scenario = tmp_path / "uniform.json"
    main(["scenario", "uniform", "--norm", "l1", "--out", str(scenario)])
    code = main([*FAST, "solve", "--scenario", str(scenario), "--algo", "l1grid", "--out", str(tmp_path / "o")])
    assert code == EXIT_PRECONDITION


def test_solve_unknown_builtin(tmp_path) -> None:
    """Test an unknown builtin name is an input error."""
    assert main([*FAST, "solve", "--scenario", "builtin:hexagon", "--out", str(tmp_path)]) == EXIT_INPUT


def test_certify_exit_codes(two_point_run, tmp_path, scenario_file, capsys) -> None:
    """Test certify passes an optimum and fails the uniform vertex measure."""
    measure = str(two_point_run / "measure.json")
    assert main([*FAST, "certify", "--scenario", "builtin:two-point", "--measure", measure, "--grid", "50"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["verdict"] == "OPTIMAL(1e-06)"

    bad = tmp_path / "uniform.json"
    bad.write_text(json.dumps(uniform_on(load_scenario(scenario_file).eta.points, 1.0).to_json()))
    code = main([*FAST, "certify", "--scenario", str(scenario_file), "--measure", str(bad), "--grid", "50"])
    assert code == EXIT_NOT_CERTIFIED
    assert json.loads(capsys.readouterr().out)["min_h"] <= -0.003


def test_influence_map(two_point_run, tmp_path, capsys) -> None:
    """Test the map of an optimum is nonnegative and R=1 gives one cell."""
    measure = str(two_point_run / "measure.json")
    out = tmp_path / "h.csv"
    argv = [*FAST, "influence-map", "--scenario", "builtin:two-point", "--measure", measure, "--resolution", "200", "--out", str(out)]
    capsys.readouterr()
    assert main(argv) == EXIT_OK
    grid = read_influence_grid(out)
    assert np.nanmin(grid.values) >= -1e-6
    min_h, at = grid.argmin()
    assert capsys.readouterr().out.startswith(f"min h={min_h:.6g} at ({at.x:.6g}, {at.y:.6g})")

    single = tmp_path / "one.csv"
    argv = [*FAST, "influence-map", "--scenario", "builtin:two-point", "--measure", measure, "--resolution", "1", "--out", str(single)]
    assert main(argv) == EXIT_OK
    assert len(single.read_text().splitlines()) == 2


def test_influence_map_budget_mismatch(two_point_run, tmp_path) -> None:
    """Test a measure with another budget exits 3."""
    scenario = tmp_path / "b2.json"
    main(["scenario", "two-point", "--budget", "2", "--out", str(scenario)])
    argv = [*FAST, "influence-map", "--scenario", str(scenario), "--measure", str(two_point_run / "measure.json"), "--out", str(tmp_path / "h.csv")]
    assert main(argv) == EXIT_PRECONDITION


def test_two_point_oracle(capsys) -> None:
    """Test the closed-form oracle output."""
    argv = ["oracle", "two-point", "--y1", "0", "0", "--y2", "1", "0", "--lambda1", "0.6", "--lambda2", "0.4", "--budget", "2"]
    assert main(argv) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["atoms"][0]["w"] == pytest.approx(1.20273, abs=1e-5)


def test_two_point_oracle_invalid() -> None:
    """Test invalid probabilities are input errors."""
    argv = ["oracle", "two-point", "--y1", "0", "0", "--y2", "1", "0", "--lambda1", "0.6", "--lambda2", "0.6"]
    assert main(argv) == EXIT_INPUT


def test_simulate_oracle(tmp_path, capsys) -> None:
    """Test the simulation oracle agrees with the closed form within its error."""
    scenario = tmp_path / "one.json"
    scenario.write_text(json.dumps({"budget": 1.0, "eta": {"type": "discrete", "points": [{"x": 0, "y": 0, "p": 1.0}]}}))
    measure = tmp_path / "m.json"
    measure.write_text(json.dumps({"budget": 1.0, "atoms": [{"x": 0, "y": 0, "w": 1.0}]}))
    assert main(["oracle", "simulate", "--scenario", str(scenario), "--measure", str(measure), "--reps", "200000"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["reps"] == 200000
    assert abs(result["estimate"] - 0.123780) < 3 * result["standard_error"] + 1e-5


def test_make_city(tmp_path) -> None:
    """Test make-city is deterministic and writes a loadable scenario."""
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["make-city", "--units", "12", "--seed", "1", "--out", str(path)]) == EXIT_OK
    assert a.read_text() == b.read_text()
    assert len(load_scenario(a).eta.rects) == 12


def test_make_city_zero_units(tmp_path) -> None:
    """Test a city needs at least one unit."""
    assert main(["make-city", "--units", "0", "--out", str(tmp_path / "c.json")]) == EXIT_INPUT


def test_bad_threads_env(monkeypatch, tmp_path) -> None:
    """Test a malformed thread variable is an input error."""
    monkeypatch.setenv("MEASURE_FW_THREADS", "lots")
    assert main(["solve", "--scenario", "builtin:two-point", "--out", str(tmp_path)]) == EXIT_INPUT


def test_version(capsys) -> None:
    """Test the version flag."""
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.startswith("measure-fw ")
