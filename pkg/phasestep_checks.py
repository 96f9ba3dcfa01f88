#!/usr/bin/env python3
"""
PhaseStep Checks - Invariant suite behind the `check` command

Each check recomputes one property of the discretization or the scheme and
compares it against a fixed tolerance. Nothing here changes a solver; a
failing check means an implementation defect, not a modelling choice.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from phasestep_config import RunConfig, build_initial_data
from phasestep_diagnostics import (energy_identity_residual, interp_identity_l2_residual,
                                   interp_identity_linf_residual, mass_identity_residuals)
from phasestep_grid import Field, build_grid, inner_l2, neumann_laplacian_apply, norm_l2, norm_linf
from phasestep_harness import estimate_rates
from phasestep_oracle import dense_run
from phasestep_potentials import LogisticParams, PotentialSet, make_logistic_potentials
from phasestep_solvers import mu_functional, newton_jacobian_apply, newton_residual, rho_functional
from phasestep_stepper import POSITIVITY_TOL, SchemeState, mu_step, rho_step, run, step_count

CHECK_COLUMNS = ['check', 'passed', 'value', 'tolerance', 'detail']

ORACLE_RHO0 = (0.3, 0.4, 0.6, 0.7)
ORACLE_TAU = 0.01
ORACLE_STEPS = 3
UNSCALED_STIFFNESS = 256.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ''

    def line(self) -> str:
        mark = '✅' if self.passed else '❌'
        return f"{mark} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.1e}) {self.detail}".rstrip()


def _at_most(name: str, value: float, tolerance: float, detail: str = '') -> CheckResult:
    return CheckResult(name, bool(value <= tolerance), float(value), tolerance, detail)


class InvariantSuite:
    """Runs every check for one configuration and collects CheckResult rows"""

    def __init__(self, config: Optional[RunConfig] = None, seed: int = 20240607):
        self.logger = logging.getLogger(__name__)
        self.config = config or RunConfig()
        self.rng = np.random.default_rng(seed)
        self.results: List[CheckResult] = []

    def checks(self) -> List[Callable[[], List[CheckResult]]]:
        return [
            self.check_laplacian,
            self.check_laplacian_order,
            self.check_potential_derivatives,
            self.check_newton_jacobian,
            self.check_interpolant_identities,
            self.check_oracle_equivalence,
            self.check_minimizers,
            self.check_run_invariants,
        ]

    def run_all(self) -> List[CheckResult]:
        self.results = []
        for check in self.checks():
            self.logger.info(f"Running {check.__name__}")
            try:
                self.results.extend(check())
            except Exception as e:
                self.logger.error(f"{check.__name__} raised: {e}")
                self.results.append(CheckResult(check.__name__, False, math.nan, math.nan, f"raised {e!r}"))
        return self.results

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def to_dataframe(self) -> pd.DataFrame:
        rows = [{'check': r.name, 'passed': r.passed, 'value': r.value, 'tolerance': r.tolerance,
                 'detail': r.detail} for r in self.results]
        return pd.DataFrame(rows, columns=CHECK_COLUMNS)

    # Spatial operator

    def check_laplacian(self) -> List[CheckResult]:
        grid = self.config.build_grid()
        symmetry = conservation = definiteness = 0.0
        for _ in range(20):
            u = Field(grid, self.rng.standard_normal(grid.n_cells))
            v = Field(grid, self.rng.standard_normal(grid.n_cells))
            lu, lv = neumann_laplacian_apply(grid, u), neumann_laplacian_apply(grid, v)
            scale = norm_l2(u) * norm_l2(v)
            symmetry = max(symmetry, abs(inner_l2(lu, v) - inner_l2(u, lv)) / scale)
            conservation = max(conservation, abs(float(np.sum(lu.values)) * grid.cell_volume) / norm_l2(u))
            definiteness = max(definiteness, inner_l2(lu, u) / norm_l2(u) ** 2)
        # plain tolerances up to 16 cells per unit length, then O(1/h^2) like the stencil entries
        stiffness = max(1.0, max(1.0 / h ** 2 for h in grid.spacing) / UNSCALED_STIFFNESS)
        # the conservation sum collects one rounding error per cell
        spread = math.sqrt(max(1.0, grid.n_cells / 4))
        return [
            _at_most('laplacian_symmetry', symmetry, 1e-12 * stiffness),
            _at_most('laplacian_conservation', conservation, 1e-13 * stiffness * spread),
            _at_most('laplacian_negative_semidefinite', definiteness, 1e-12 * stiffness),
        ]

    def check_laplacian_order(self) -> List[CheckResult]:
        sizes, errors = [], []
        for n in (32, 64, 128, 256):
            grid = build_grid(1, [n], [1.0])
            u = Field.from_function(grid, lambda x: np.cos(np.pi * x))
            exact = -np.pi ** 2 * u.values
            errors.append(float(np.max(np.abs(neumann_laplacian_apply(grid, u).values - exact))))
            sizes.append(1.0 / n)
        orders = estimate_rates(errors, sizes)
        worst = max(abs(p - 2.0) for p in orders)
        return [_at_most('laplacian_order', worst, 0.2, f"orders {', '.join(f'{p:.3f}' for p in orders)}")]

    # Nonlinearities

    def check_potential_derivatives(self) -> List[CheckResult]:
        ps = self.config.build_potentials()
        r = np.linspace(0.05, 0.95, 37)
        h = 1e-6
        worst = 0.0
        for value, d1, d2 in ((ps.f1.value, ps.f1.d1, ps.f1.d2),
                              (ps.f2.value, ps.f2.d1, ps.f2.d2),
                              (ps.g.value, ps.g.d1, ps.g.d2)):
            for func, derivative in ((value, d1), (d1, d2)):
                difference = (func(r + h) - func(r - h)) / (2.0 * h)
                exact = derivative(r)
                worst = max(worst, float(np.max(np.abs(difference - exact) / np.maximum(1.0, np.abs(exact)))))
        return [_at_most('potential_derivatives', worst, 1e-6)]

    def check_newton_jacobian(self) -> List[CheckResult]:
        ps = self.config.build_potentials()
        grid = build_grid(1, [16], [1.0])
        tau = 0.01
        rho = Field(grid, self.rng.uniform(0.2, 0.8, grid.n_cells))
        b = Field(grid, self.rng.uniform(0.2, 0.8, grid.n_cells))
        v = Field(grid, self.rng.standard_normal(grid.n_cells))
        eps = 1e-7
        plus = newton_residual(ps, tau, b, rho.with_values(rho.values + eps * v.values))
        minus = newton_residual(ps, tau, b, rho.with_values(rho.values - eps * v.values))
        difference = (plus.values - minus.values) / (2.0 * eps)
        exact = newton_jacobian_apply(ps, tau, rho, v).values
        error = float(np.linalg.norm(difference - exact) / np.linalg.norm(exact))
        return [_at_most('newton_jacobian', error, 1e-5)]

    # Time interpolants

    def check_interpolant_identities(self) -> List[CheckResult]:
        worst_linf = worst_l2 = 0.0
        for _ in range(50):
            n = int(self.rng.integers(2, 65))
            tau = float(self.rng.uniform(0.01, 1.0))
            nodes = list(self.rng.standard_normal((n + 1, 5)))
            worst_linf = max(worst_linf, interp_identity_linf_residual(nodes, tau))
            worst_l2 = max(worst_l2, interp_identity_l2_residual(nodes, tau))
        return [_at_most('interpolant_linf_identity', worst_linf, 1e-13),
                _at_most('interpolant_l2_identity', worst_l2, 1e-13)]

    # Scheme against the dense oracle

    def _oracle_problem(self):
        grid = build_grid(1, [4], [1.0])
        ps = make_logistic_potentials(LogisticParams(1.0, 0.5, 0.0))
        return grid, ps, Field.constant(grid, 1.0), Field(grid, ORACLE_RHO0)

    def check_oracle_equivalence(self) -> List[CheckResult]:
        grid, ps, mu0, rho0 = self._oracle_problem()
        trajectory = run(grid, ps, (mu0, rho0), ORACLE_TAU, ORACLE_TAU * ORACLE_STEPS,
                         settings=self.config.solver_settings())
        mus, rhos = dense_run(grid, ps, mu0.values, rho0.values, ORACLE_TAU, ORACLE_STEPS)
        gap = 0.0
        for n, state in enumerate(trajectory.states):
            gap = max(gap, float(np.max(np.abs(state.rho.values - rhos[n]))),
                      float(np.max(np.abs(state.mu.values - mus[n]))))
        return [_at_most('oracle_equivalence', gap, 1e-8, f"{grid.n_cells} cells, {ORACLE_STEPS} steps")]

    def check_minimizers(self) -> List[CheckResult]:
        grid, ps, mu0, rho0 = self._oracle_problem()
        settings = self.config.solver_settings()
        state = SchemeState.initial(mu0, rho0, ps)
        rho_next, _ = rho_step(state, ORACLE_TAU, ps, settings)
        mu_next, _ = mu_step(state, rho_next, ORACLE_TAU, ps, settings)

        b = Field(grid, rho0.values + ORACLE_TAU * mu0.values * ps.g.d1(rho0.values))
        coefficient = Field(grid, 1.0 + state.gamma.values + ps.g.value(rho_next.values))
        rhs = Field(grid, (1.0 + 2.0 * state.gamma.values) * mu0.values)
        j2 = rho_functional(ps, ORACLE_TAU, b, rho_next)
        j1 = mu_functional(coefficient, ORACLE_TAU, rhs, mu_next)
        room = min(rho_next.min(), 1.0 - rho_next.max())

        rho_violation = mu_violation = 0.0
        for _ in range(100):
            direction = self.rng.uniform(-1.0, 1.0, grid.n_cells)
            scale = float(self.rng.uniform(1e-4, 1e-2))
            trial = rho_next.with_values(rho_next.values + 0.5 * room * scale * direction)
            rho_violation = max(rho_violation, (j2 - rho_functional(ps, ORACLE_TAU, b, trial)) / (1.0 + abs(j2)))
            trial = mu_next.with_values(mu_next.values + scale * direction)
            mu_violation = max(mu_violation, (j1 - mu_functional(coefficient, ORACLE_TAU, rhs, trial)) / (1.0 + abs(j1)))
        return [_at_most('rho_step_minimizes_j2', rho_violation, 1e-12),
                _at_most('mu_step_minimizes_j1', mu_violation, 1e-12)]

    # Whole run

    def check_run_invariants(self) -> List[CheckResult]:
        config = self.config
        grid = config.build_grid()
        ps: PotentialSet = config.build_potentials()
        init = build_initial_data(config, grid)
        tau = config.time.tau
        if step_count(config.time.T, tau) == 0:
            return [CheckResult('run_invariants', True, 0.0, 0.0, 'T = 0, nothing to march')]
        trajectory = run(grid, ps, init, tau, config.time.T, settings=config.solver_settings())

        energy = energy_identity_residual(trajectory, ps, trajectory.n_steps)
        mass = float(np.max(mass_identity_residuals(trajectory)))
        dip = max(max(0.0, -state.mu.min()) / norm_linf(state.mu) if norm_linf(state.mu) > 0 else 0.0
                  for state in trajectory.states)
        margin = trajectory.interiority_margin
        self.logger.info(f"Interiority margin over the run: {margin:.4g}, "
                         f"{trajectory.evolved_margin:.4g} after step 0")
        return [
            _at_most('energy_identity', energy, 1e-8, f"m = {trajectory.n_steps}"),
            _at_most('mass_identity', mass, 1e-10),
            _at_most('mu_nonnegative', dip, POSITIVITY_TOL),
            CheckResult('rho_interior', bool(margin > 0.0), margin, 0.0, 'min of min(rho, 1 - rho)'),
        ]
