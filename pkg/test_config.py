#!/usr/bin/env python3
"""
Tests for the configuration format, validation and initial-data presets
"""

import numpy as np
import pytest

from phasestep_config import (ConfigError, RunConfig, build_initial_data, load_config, parse_config,
                              serialize_config)
from phasestep_grid import Field, build_grid, write_snapshot
from phasestep_stepper import InitialDataError
from quickstart import scenario_config


def test_empty_text_is_the_default_scenario():
    config = parse_config("")
    assert config == RunConfig()
    assert config.time.tau == 0.25 / 256
    assert config.grid.cells == (128,)
    assert config.logistic_params().is_convex


def test_comments_and_blank_lines():
    config = parse_config("# a run\n\ngrid.cells = 64   # coarser\npotential.alpha2 = 3\n")
    assert config.grid.cells == (64,)
    assert config.potential.alpha2 == 3.0
    assert config.logistic_params().has_two_wells


def test_tau_follows_T_when_unset():
    assert parse_config("time.T = 1.0").time.tau == 1.0 / 256
    assert parse_config("time.T = 0").time.tau == 0.25 / 256


def test_largest_admissible_tau_is_accepted():
    assert parse_config("time.tau = 0.5").time.tau == 0.5


def test_inadmissible_tau():
    with pytest.raises(ConfigError) as info:
        parse_config("grid.cells = 32\ntime.tau = 0.6\n")
    assert info.value.tag == 'tau-not-admissible'
    assert info.value.key == 'time.tau'
    assert info.value.line == 2


def test_inadmissible_ladder_start():
    with pytest.raises(ConfigError) as info:
        parse_config("time.T = 8\ntime.tau = 0.25\ntime.ladder = 4,8")
    assert info.value.key == 'time.ladder'


def test_initial_data_must_stay_inside():
    with pytest.raises(ConfigError) as info:
        parse_config("init.rho_amp = 0.6")
    assert info.value.tag == 'invalid-initial-data'
    assert "init.rho_amp" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config("init.mu_amp = 1.5")


@pytest.mark.parametrize("text, tag, line", [
    ("grid.cells = 16\ntime.dt = 0.1", 'unknown-key', 2),
    ("time.T = 1\ntime.T = 2", 'duplicate-key', 2),
    ("grid.cells", 'parse-error', 1),
    ("\n\ngrid.cells = sixteen", 'bad-value', 3),
    ("grid.cells = 16.5", 'bad-value', 1),
    ("time.T = nan", 'bad-value', 1),
])
def test_parse_errors_name_the_line(text, tag, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.tag == tag
    assert info.value.line == line
    assert f"line {line}:" in str(info.value)


@pytest.mark.parametrize("text, key", [
    ("grid.dim = 3\ngrid.cells = 4,4,4\ngrid.lengths = 1,1,1", 'grid.cells'),
    ("grid.dim = 2", 'grid.cells'),
    ("potential.alpha1 = 0", 'potential.alpha1'),
    ("potential.alpha3 = -1", 'potential.alpha3'),
    ("potential.g = custom", 'potential.g'),
    ("time.T = -1", 'time.T'),
    ("time.tau = 0", 'time.tau'),
    ("time.ladder = 16,0", 'time.ladder'),
    ("init.preset = spiky", 'init.preset'),
    ("init.preset = snapshot", 'init.mu_file'),
    ("solver.theta = 1", 'solver.theta'),
    ("solver.cg_max_iters = -1", 'solver.cg_max_iters'),
    ("output.store_every = 0", 'output.store_every'),
    ("output.format = json", 'output.format'),
])
def test_invalid_values(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_two_dimensional_config():
    config = parse_config("grid.dim = 2\ngrid.cells = 16,8\ngrid.lengths = 1,0.5\n")
    grid = config.build_grid()
    assert grid.shape == (8, 16)
    assert grid.cell_volume == pytest.approx(1 / 16 * 0.5 / 8)


def test_serialized_config_parses_back():
    text = ("grid.cells = 40\npotential.alpha2 = 0.3\ntime.T = 0.1\ntime.tau = 0.003125\n"
            "time.ladder = 4,8\ninit.preset = rough\nsolver.cg_max_iters = 500\noutput.format = excel\n")
    config = parse_config(text)
    assert parse_config(serialize_config(config)) == config
    assert parse_config(serialize_config(RunConfig())) == RunConfig()


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("grid.cells = 20\n")
    assert load_config(path).grid.cells == (20,)


def test_solver_settings_cap():
    assert RunConfig().solver_settings().cg_max_iters is None
    assert parse_config("solver.cg_max_iters = 30").solver_settings().cg_max_iters == 30


def test_ladder_and_reference_taus():
    config = RunConfig()
    assert config.ladder_taus() == [0.25 / n for n in (16, 32, 64, 128, 256)]
    assert config.reference_tau() == 0.25 / 2048


def test_cosine_preset():
    config = RunConfig()
    mu0, rho0 = build_initial_data(config)
    grid = config.build_grid()
    x, = grid.coordinates()
    np.testing.assert_allclose(rho0.values, 0.5 + 0.2 * np.cos(np.pi * x), rtol=1e-15)
    np.testing.assert_allclose(mu0.values, 1.0 + 0.5 * np.cos(np.pi * x), rtol=1e-15)


def test_rough_preset_stays_inside():
    config = parse_config("init.preset = rough\ngrid.cells = 64")
    mu0, rho0 = build_initial_data(config)
    assert 0.25 <= rho0.min() and rho0.max() <= 0.75
    assert not np.allclose(rho0.values, build_initial_data(RunConfig(), config.build_grid())[1].values)


def test_two_dimensional_preset_is_symmetric():
    config = parse_config("grid.dim = 2\ngrid.cells = 8,8\ngrid.lengths = 1,1\n")
    _, rho0 = build_initial_data(config)
    square = rho0.values.reshape(8, 8)
    np.testing.assert_allclose(square, square.T, rtol=0, atol=1e-15)


def test_snapshot_preset(tmp_path):
    grid = build_grid(1, [8], [1.0])
    write_snapshot(tmp_path / "mu.txt", Field.constant(grid, 0.7))
    write_snapshot(tmp_path / "rho.txt", Field(grid, np.linspace(0.3, 0.6, 8)))
    config = parse_config("grid.cells = 8\ninit.preset = snapshot\ninit.mu_file = mu.txt\ninit.rho_file = rho.txt")
    mu0, rho0 = build_initial_data(config, base_dir=tmp_path)
    assert np.all(mu0.values == 0.7)
    np.testing.assert_array_equal(rho0.values, np.linspace(0.3, 0.6, 8))


def test_snapshot_preset_errors(tmp_path):
    config = parse_config("grid.cells = 8\ninit.preset = snapshot\ninit.mu_file = mu.txt\ninit.rho_file = rho.txt")
    with pytest.raises(InitialDataError):
        build_initial_data(config, base_dir=tmp_path)
    wrong = build_grid(1, [6], [1.0])
    write_snapshot(tmp_path / "mu.txt", Field.constant(wrong, 0.7))
    write_snapshot(tmp_path / "rho.txt", Field.constant(wrong, 0.5))
    with pytest.raises(InitialDataError):
        build_initial_data(config, base_dir=tmp_path)
    grid = build_grid(1, [8], [1.0])
    write_snapshot(tmp_path / "mu.txt", Field.constant(grid, 0.7))
    write_snapshot(tmp_path / "rho.txt", Field.constant(grid, 1.0))
    with pytest.raises(InitialDataError):
        build_initial_data(config, base_dir=tmp_path)


@pytest.mark.parametrize("choice", ['1', '2', '3', '4'])
def test_wizard_scenarios_are_valid(choice):
    config = scenario_config(choice)
    assert parse_config(serialize_config(config)) == config


def test_wizard_rejects_unknown_scenario():
    with pytest.raises(ValueError):
        scenario_config('9')
