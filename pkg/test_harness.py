#!/usr/bin/env python3
"""
Tests for observed orders, ladder validation and refinement studies
"""

import logging
import math

import numpy as np
import pytest

from phasestep_config import RunConfig, build_initial_data
from phasestep_diagnostics import ErrorNorms
from phasestep_grid import Field, build_grid
from phasestep_potentials import AdmissibilityError, LogisticParams, make_logistic_potentials
from phasestep_harness import (UNDEFINED_RATE, ConvergenceTable, LadderError, StudyError, convergence_study,
                               estimate_rates, format_rate, validate_ladder)
from phasestep_stepper import SolverSettings


@pytest.fixture
def ps():
    return make_logistic_potentials(LogisticParams(alpha1=1.0, alpha2=0.5, alpha3=0.0))


def smooth_data(grid):
    rho0 = Field.from_function(grid, lambda x: 0.5 + 0.2 * np.cos(np.pi * x))
    mu0 = Field.from_function(grid, lambda x: 1.0 + 0.5 * np.cos(np.pi * x))
    return mu0, rho0


def test_halving_errors_give_first_order():
    rates = estimate_rates([0.4, 0.2, 0.1], [0.1, 0.05, 0.025])
    np.testing.assert_allclose(rates, [1.0, 1.0], rtol=1e-14)


@pytest.mark.parametrize("order", [1.0, 2.0])
def test_power_law_errors(order):
    taus = [0.1 / 2 ** k for k in range(5)]
    rates = estimate_rates([3.0 * tau ** order for tau in taus], taus)
    np.testing.assert_allclose(rates, order, rtol=1e-12)


def test_degenerate_ladder_has_undefined_rate():
    rates = estimate_rates([0.3, 0.3], [0.1, 0.1])
    assert rates.shape == (1,)
    assert math.isnan(rates[0])
    assert format_rate(rates[0]) == UNDEFINED_RATE


def test_zero_error_has_undefined_rate():
    rates = estimate_rates([0.2, 0.0, 0.0], [0.1, 0.05, 0.025])
    assert np.all(np.isnan(rates))


def test_single_run_has_no_rates():
    assert estimate_rates([0.1], [0.1]).size == 0


@pytest.mark.parametrize("errors, taus", [([-0.1, 0.1], [0.1, 0.05]), ([0.1, 0.05], [0.1, 0.0]),
                                          ([0.1], [0.1, 0.05])])
def test_rate_input_checks(errors, taus):
    with pytest.raises(ValueError):
        estimate_rates(errors, taus)


def test_format_rate():
    assert format_rate(1.0004) == "1.000"
    assert format_rate(math.nan) == UNDEFINED_RATE


def test_valid_ladders():
    validate_ladder([0.1, 0.05, 0.025], 0.00625)
    validate_ladder([0.1, 0.1], 0.025)
    validate_ladder([0.1, 0.025], 0.00625)


@pytest.mark.parametrize("taus, tau_ref", [
    ([0.25 / 16, 0.25 / 24], 0.25 / 2048),
    ([0.05, 0.1], 0.0125),
    ([0.1, 0.05], 0.025),
    ([0.1, 0.05], 0.003),
    ([], 0.01),
    ([0.1, -0.05], 0.01),
])
def test_invalid_ladders(taus, tau_ref):
    with pytest.raises(LadderError) as info:
        validate_ladder(taus, tau_ref)
    assert info.value.tag == 'ladder-not-nested'


def table_with(totals, margins=None):
    table = ConvergenceTable(tau_ref=0.001)
    for k, total in enumerate(totals):
        margin = 0.2 if margins is None else margins[k]
        table.append(0.1 / 2 ** k, ErrorNorms(total / 4, total / 4, total / 4, total / 4), margin)
    return table


def test_convergence_table_frames():
    table = table_with([0.4, 0.2, 0.1])
    frame = table.to_dataframe()
    assert list(frame['err_total']) == pytest.approx([0.4, 0.2, 0.1])
    rates = table.rates_frame()
    assert list(rates.columns) == ['tau_coarse', 'tau_fine', 'rate_total', 'rate_rho', 'rate_mu']
    np.testing.assert_allclose(rates['rate_total'], 1.0, rtol=1e-12)
    np.testing.assert_allclose(table.component_rates('linf_0T_H'), 1.0, rtol=1e-12)
    np.testing.assert_allclose(table.tail_rates(), [1.0, 1.0], rtol=1e-12)


def test_summary_lists_every_tau():
    lines = table_with([0.4, 0.2]).summary().splitlines()
    assert len(lines) == 4
    assert lines[-1].split()[2] == "1.000"


def test_anomalies_are_logged(caplog):
    table = table_with([0.1, 0.2], margins=[0.2, 0.05])
    with caplog.at_level(logging.WARNING, logger='phasestep_harness'):
        table.log_anomalies()
    messages = ' '.join(record.getMessage() for record in caplog.records)
    assert "Error grew" in messages
    assert "Interiority margin degrades" in messages


def test_small_study(ps):
    grid = build_grid(1, [16], [1.0])
    T = 0.05
    taus = [T / 4, T / 8, T / 16]
    table = convergence_study(grid, ps, smooth_data(grid), T, taus, T / 64, max_workers=2)
    assert table.taus == taus
    totals = table.totals
    assert all(total > 0.0 for total in totals)
    assert totals[0] > totals[1] > totals[2]
    assert all(margin > 0.0 for margin in table.margins)


def test_study_is_deterministic(ps):
    grid = build_grid(1, [8], [1.0])
    args = (grid, ps, smooth_data(grid), 0.04, [0.01, 0.005], 0.00125)
    first = convergence_study(*args, max_workers=1).totals
    second = convergence_study(*args, max_workers=3).totals
    assert first == second


def test_study_checks_before_running(ps):
    grid = build_grid(1, [8], [1.0])
    with pytest.raises(LadderError):
        convergence_study(grid, ps, smooth_data(grid), 0.25, [0.25 / 16, 0.25 / 24], 0.25 / 2048)
    with pytest.raises(AdmissibilityError):
        convergence_study(grid, ps, smooth_data(grid), 1.5, [0.75, 0.375], 0.75 / 8)


def test_study_failure_keeps_partial_table(ps):
    grid = build_grid(1, [8], [1.0])
    settings = SolverSettings(newton_tol=1e-30, newton_max_iters=1)
    with pytest.raises(StudyError) as info:
        convergence_study(grid, ps, smooth_data(grid), 0.04, [0.01, 0.005], 0.00125, settings=settings)
    assert info.value.tag == 'study-failed'
    assert info.value.table.taus == []
    assert info.value.cause.tag == 'step-failure'


def test_default_scenario_is_first_order():
    config = RunConfig()
    grid = config.build_grid()
    ps = config.build_potentials()
    table = convergence_study(grid, ps, build_initial_data(config, grid), config.time.T,
                              config.ladder_taus(), config.reference_tau(),
                              config.solver_settings())
    assert len(table.taus) == 5
    for rate in table.tail_rates(2):
        assert 0.8 <= rate <= 1.2


@pytest.mark.slow
def test_tail_rates_do_not_depend_on_the_reference():
    config = RunConfig()
    grid = config.build_grid()
    ps = config.build_potentials()
    init = build_initial_data(config, grid)
    T = config.time.T
    # reference at least 16 times finer than the finest ladder step
    taus = [T / n for n in (16, 32, 64, 128)]
    tails = [convergence_study(grid, ps, init, T, taus, T / ref_steps, config.solver_settings()).tail_rates(2)
             for ref_steps in (2048, 4096)]
    assert np.max(np.abs(tails[0] - tails[1])) < 0.05
