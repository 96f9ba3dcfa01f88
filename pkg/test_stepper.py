#!/usr/bin/env python3
"""
Tests for single steps, whole runs and trajectory export
"""

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from phasestep_config import RunConfig, build_initial_data
from phasestep_grid import Field, apply_laplacian_values, build_grid, norm_l2, read_snapshot
from phasestep_oracle import dense_laplacian, dense_mu_step, dense_rho_step, dense_run, stationary_rho
from phasestep_potentials import AdmissibilityError, LogisticParams, make_logistic_potentials
from phasestep_stepper import (STEP_CSV_COLUMNS, InitialDataError, MissingStepsError, ScheduleError,
                               SchemeState, SolverSettings, StepFailure, advance, mu_step, rho_step, run,
                               step_count)


@pytest.fixture
def ps():
    return make_logistic_potentials(LogisticParams(alpha1=1.0, alpha2=0.5, alpha3=0.0))


def smooth_data(grid):
    rho0 = Field.from_function(grid, lambda x: 0.5 + 0.2 * np.cos(np.pi * x))
    mu0 = Field.from_function(grid, lambda x: 1.0 + 0.5 * np.cos(np.pi * x))
    return mu0, rho0


def test_uniform_state_is_stationary(ps):
    grid = build_grid(1, [6], [1.0])
    m_star = 0.8
    r_star = stationary_rho(ps, m_star)
    state = SchemeState.initial(Field.constant(grid, m_star), Field.constant(grid, r_star), ps)
    next_state, report = advance(state, 0.05, ps)
    assert_allclose(next_state.rho.values, r_star, rtol=0, atol=1e-9)
    assert_allclose(next_state.mu.values, m_star, rtol=1e-10)
    assert next_state.n == 1 and next_state.t == 0.05
    assert report.mass_identity_residual <= 1e-10


def test_mu_step_keeps_constants(ps):
    grid = build_grid(1, [5], [1.0])
    rho = Field.constant(grid, 0.4)
    state = SchemeState.initial(Field.constant(grid, 2.0), rho, ps)
    mu_next, _ = mu_step(state, rho, 0.1, ps)
    assert_allclose(mu_next.values, 2.0, rtol=1e-12)


def test_oracle_equivalence_on_four_cells(ps):
    grid = build_grid(1, [4], [1.0])
    rho0 = Field(grid, [0.3, 0.4, 0.6, 0.7])
    mu0 = Field.constant(grid, 1.0)
    trajectory = run(grid, ps, (mu0, rho0), 0.01, 0.03)
    mus, rhos = dense_run(grid, ps, mu0.values, rho0.values, 0.01, 3)
    for n, state in enumerate(trajectory.states):
        assert_allclose(state.rho.values, rhos[n], rtol=0, atol=1e-8)
        assert_allclose(state.mu.values, mus[n], rtol=0, atol=1e-8)


def test_dense_run_accepts_roots_at_roundoff(ps):
    grid = build_grid(1, [4], [1.0])
    lap = dense_laplacian(grid)
    mus, rhos = dense_run(grid, ps, np.ones(4), np.array([0.3, 0.4, 0.6, 0.7]), 0.01, 6)
    assert len(rhos) == 7
    for n in range(6):
        b = rhos[n] + 0.01 * mus[n] * ps.g.d1(rhos[n])
        gap = rhos[n + 1] - 0.01 * lap @ rhos[n + 1] + 0.01 * ps.df(rhos[n + 1]) - b
        assert np.max(np.abs(gap)) <= 1e-12
        assert np.all((rhos[n + 1] > 0.0) & (rhos[n + 1] < 1.0))


def test_mu_step_matches_dense_solve(ps):
    grid = build_grid(1, [4], [1.0])
    rho0 = np.array([0.3, 0.4, 0.6, 0.7])
    state = SchemeState.initial(Field.constant(grid, 1.0), Field(grid, rho0), ps)
    rho_next = dense_rho_step(ps, 0.01, dense_laplacian(grid), rho0, np.ones(4))
    mu_next, _ = mu_step(state, Field(grid, rho_next), 0.01, ps)
    expected = dense_mu_step(ps, 0.01, dense_laplacian(grid), rho0, rho_next, np.ones(4))
    assert_allclose(mu_next.values, expected, rtol=0, atol=1e-10)


def test_rho_step_is_consistent_with_explicit_predictor(ps):
    grid = build_grid(1, [32], [1.0])
    mu0, rho0 = smooth_data(grid)
    state = SchemeState.initial(mu0, rho0, ps)
    drift = (apply_laplacian_values(grid, rho0.values) - ps.df(rho0.values)
             + mu0.values * ps.g.d1(rho0.values))
    gaps = []
    for tau in (1e-3, 5e-4, 2.5e-4):
        settings = SolverSettings(newton_tol=1e-13)
        rho_next, _ = rho_step(state, tau, ps, settings)
        gaps.append(norm_l2(Field(grid, rho_next.values - (rho0.values + tau * drift))))
    for coarse, fine in zip(gaps, gaps[1:]):
        assert 3.0 <= coarse / fine <= 5.0


def test_mass_identity_every_step(ps):
    grid = build_grid(1, [32], [1.0])
    trajectory = run(grid, ps, smooth_data(grid), 0.25 / 64, 0.25)
    assert max(report.mass_identity_residual for report in trajectory.reports) <= 1e-10


def test_positivity_and_interiority(ps):
    grid = build_grid(2, [8, 8], [1.0, 1.0])
    rng = np.random.default_rng(0)
    mu0 = Field(grid, rng.uniform(0.0, 2.0, 64))
    rho0 = Field(grid, rng.uniform(0.1, 0.9, 64))
    trajectory = run(grid, ps, (mu0, rho0), 0.01, 0.1)
    for state in trajectory.states:
        state.validate(ps)
    assert trajectory.interiority_margin > 0.0


def test_margin_after_the_initial_state(ps):
    grid = build_grid(1, [16], [1.0])
    trajectory = run(grid, ps, smooth_data(grid), 0.01, 0.05, store_every=2)
    evolved = trajectory.evolved_margin
    assert evolved == min(report.min_distance_to_bounds for report in trajectory.reports)
    assert trajectory.interiority_margin == min(trajectory.states[0].distance_to_bounds, evolved)
    assert 0.0 < evolved < 0.5


def test_reflection_symmetry(ps):
    grid = build_grid(1, [32], [1.0])
    rho0 = Field.from_function(grid, lambda x: 0.5 + 0.2 * np.cos(2 * np.pi * x))
    mu0 = Field.from_function(grid, lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x))
    final = run(grid, ps, (mu0, rho0), 0.01, 0.05).final
    assert_allclose(final.rho.values, final.rho.values[::-1], rtol=0, atol=1e-12)
    assert_allclose(final.mu.values, final.mu.values[::-1], rtol=0, atol=1e-12)


def test_runs_are_deterministic(ps):
    grid = build_grid(1, [16], [1.0])
    first = run(grid, ps, smooth_data(grid), 0.01, 0.05).final
    second = run(grid, ps, smooth_data(grid), 0.01, 0.05).final
    assert np.array_equal(first.mu.values, second.mu.values)
    assert np.array_equal(first.rho.values, second.rho.values)


def test_empty_run(ps):
    grid = build_grid(1, [8], [1.0])
    trajectory = run(grid, ps, smooth_data(grid), 0.01, 0.0)
    assert trajectory.n_steps == 0
    assert trajectory.step_indices == [0]
    assert trajectory.to_dataframe().empty
    assert np.isnan(trajectory.evolved_margin)


def test_storage_stride_keeps_final_state(ps):
    grid = build_grid(1, [8], [1.0])
    trajectory = run(grid, ps, smooth_data(grid), 0.01, 0.07, store_every=3)
    assert trajectory.step_indices == [0, 3, 6, 7]
    assert len(trajectory.reports) == 7
    with pytest.raises(MissingStepsError):
        trajectory.state_at(4)


def test_run_rejects_bad_input(ps):
    grid = build_grid(1, [8], [1.0])
    mu0, rho0 = smooth_data(grid)
    with pytest.raises(InitialDataError):
        run(grid, ps, (mu0, Field.constant(grid, 1.0)), 0.01, 0.1)
    with pytest.raises(InitialDataError):
        run(grid, ps, (Field.constant(grid, -0.1), rho0), 0.01, 0.1)
    with pytest.raises(ScheduleError):
        run(grid, ps, (mu0, rho0), 0.03, 0.1)
    with pytest.raises(AdmissibilityError):
        run(grid, ps, (mu0, rho0), 0.75, 1.5)


def test_step_count():
    assert step_count(0.25, 0.25 / 256) == 256
    assert step_count(0.0, 0.1) == 0
    with pytest.raises(ScheduleError):
        step_count(0.25, 0.5)


def test_step_failure_carries_partial_trajectory(ps):
    grid = build_grid(1, [8], [1.0])
    settings = SolverSettings(newton_tol=1e-30, newton_max_iters=2)
    with pytest.raises(StepFailure) as info:
        run(grid, ps, smooth_data(grid), 0.01, 0.05, settings=settings)
    assert info.value.trajectory.step_indices == [0]
    assert info.value.cause.tag == 'newton-failure'


def test_step_csv_and_snapshots(ps, tmp_path):
    grid = build_grid(1, [8], [1.0])
    trajectory = run(grid, ps, smooth_data(grid), 0.01, 0.03)
    path = trajectory.write_step_csv(tmp_path / "steps.csv")
    table = pd.read_csv(path)
    assert list(table.columns) == STEP_CSV_COLUMNS
    assert list(table['step']) == [1, 2, 3]
    written = trajectory.write_snapshots(tmp_path / "snapshots")
    assert len(written) == 8
    assert np.array_equal(read_snapshot(tmp_path / "snapshots" / "rho_00003.txt").values,
                          trajectory.final.rho.values)


def test_default_scenario_runs():
    config = RunConfig()
    grid = config.build_grid()
    trajectory = run(grid, config.build_potentials(), build_initial_data(config, grid),
                     config.time.tau, config.time.T)
    assert trajectory.n_steps == 256
    for state in trajectory.states:
        state.validate()
    assert max(report.mass_identity_residual for report in trajectory.reports) <= 1e-10
