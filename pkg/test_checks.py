#!/usr/bin/env python3
"""
Tests for the invariant suite behind the check command
"""

from dataclasses import replace

import pytest

from phasestep_checks import InvariantSuite
from phasestep_config import RunConfig


def small_config(cells=16, T=0.02, tau=0.005):
    config = RunConfig()
    return replace(config,
                   grid=replace(config.grid, cells=(cells,)),
                   time=replace(config.time, T=T, tau=tau))


def by_name(results):
    return {result.name: result for result in results}


def test_oracle_equivalence_passes():
    results = InvariantSuite(small_config()).check_oracle_equivalence()
    assert results
    assert all(result.passed for result in results)


def test_laplacian_tolerances_plain_on_coarse_grids():
    results = by_name(InvariantSuite(small_config(cells=16)).check_laplacian())
    assert results['laplacian_symmetry'].tolerance == pytest.approx(1e-12)
    assert results['laplacian_symmetry'].passed
    assert results['laplacian_negative_semidefinite'].tolerance == pytest.approx(1e-12)


def test_laplacian_tolerances_scaled_on_fine_grids():
    results = by_name(InvariantSuite(small_config(cells=128)).check_laplacian())
    assert results['laplacian_symmetry'].tolerance == pytest.approx(1e-12 * 128 ** 2 / 256)
    assert all(result.passed for result in results.values())


def test_mu_dip_is_zero_for_positive_mu():
    results = by_name(InvariantSuite(small_config()).check_run_invariants())
    assert results['mu_nonnegative'].value == 0.0
    assert results['mu_nonnegative'].passed
    assert results['rho_interior'].passed
