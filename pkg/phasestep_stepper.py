#!/usr/bin/env python3
"""
PhaseStep Stepper - One step of the semi-implicit scheme and whole trajectories

A step first solves the singular semilinear problem for rho_{n+1}
(with mu_n g'(rho_n) explicit), then the linear problem

    (1 + gamma_n + gamma_{n+1}) mu_{n+1} - tau L mu_{n+1} = (1 + 2 gamma_n) mu_n,

where gamma_n = g(rho_n). Nothing is iterated between the two sub-steps.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from phasestep_grid import (Field, Grid, GridError, apply_laplacian_values, laplacian_diagonal,
                            norm_l2, norm_linf, write_snapshot)
from phasestep_potentials import PotentialSet, check_admissible_tau
from phasestep_solvers import (DEFAULT_CG_TOL, DEFAULT_NEWTON_MAX_ITERS, DEFAULT_NEWTON_TOL,
                               DEFAULT_THETA, LinearSolveReport, NewtonReport, SolverError,
                               cg_solve, newton_barrier_solve)

logger = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-12
STEP_CSV_COLUMNS = ['step', 't', 'mu_min', 'mu_max', 'rho_min', 'rho_max',
                    'newton_iters', 'cg_iters', 'mass_residual', 'xi_l2']


class InitialDataError(ValueError):
    tag = 'invalid-initial-data'


class ScheduleError(ValueError):
    tag = 'time-not-integral'


class MissingStepsError(ValueError):
    tag = 'missing-steps'


class PositivityError(RuntimeError):
    tag = 'mu-negative'

    def __init__(self, message: str, mu_min: float, mu_linf: float):
        super().__init__(message)
        self.mu_min = mu_min
        self.mu_linf = mu_linf


class StepFailure(RuntimeError):
    """A step failed; the trajectory up to the last good state is attached"""
    tag = 'step-failure'

    def __init__(self, message: str, trajectory: 'Trajectory', cause: Exception):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


@dataclass(frozen=True)
class SolverSettings:
    newton_tol: float = DEFAULT_NEWTON_TOL
    newton_max_iters: int = DEFAULT_NEWTON_MAX_ITERS
    cg_tol: float = DEFAULT_CG_TOL
    cg_max_iters: Optional[int] = None
    theta: float = DEFAULT_THETA

    def newton_abs_tol(self, grid: Grid) -> float:
        return self.newton_tol * math.sqrt(grid.volume)

    def cg_iteration_cap(self, grid: Grid) -> int:
        return self.cg_max_iters if self.cg_max_iters else 10 * grid.n_cells


@dataclass(frozen=True)
class SchemeState:
    n: int
    t: float
    mu: Field
    rho: Field
    gamma: Field

    @classmethod
    def initial(cls, mu0: Field, rho0: Field, ps: PotentialSet) -> 'SchemeState':
        return cls(n=0, t=0.0, mu=mu0, rho=rho0, gamma=Field(rho0.grid, ps.g.value(rho0.values)))

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    def validate(self, ps: Optional[PotentialSet] = None):
        """Raise ValueError when mu < 0 beyond roundoff, rho leaves (0,1) or gamma is stale"""
        mu_floor = -POSITIVITY_TOL * max(1.0, norm_linf(self.mu))
        if self.mu.min() < mu_floor:
            raise ValueError(f"step {self.n}: mu has negative values (min {self.mu.min():.3e})")
        if not (np.all(self.rho.values > 0.0) and np.all(self.rho.values < 1.0)):
            raise ValueError(f"step {self.n}: rho left the open interval (0,1)")
        if ps is not None:
            expected = ps.g.value(self.rho.values)
            if not np.allclose(self.gamma.values, expected, rtol=1e-15, atol=0.0):
                raise ValueError(f"step {self.n}: cached gamma does not match g(rho)")

    @property
    def distance_to_bounds(self) -> float:
        return float(min(self.rho.min(), 1.0 - self.rho.max()))


@dataclass(frozen=True)
class StepReport:
    newton: NewtonReport
    linear: LinearSolveReport
    mu_min: float
    mu_max: float
    rho_min: float
    rho_max: float
    mass_identity_residual: float
    xi_l2: float

    @property
    def min_distance_to_bounds(self) -> float:
        return min(self.rho_min, 1.0 - self.rho_max)


@dataclass
class Trajectory:
    """Stored states of one run (always n = 0 and n = N) plus every step report"""

    grid: Grid
    tau: float
    n_steps: int
    store_every: int = 1
    states: List[SchemeState] = field(default_factory=list)
    reports: List[StepReport] = field(default_factory=list)

    def __post_init__(self):
        self._index: Dict[int, int] = {state.n: i for i, state in enumerate(self.states)}

    @property
    def T(self) -> float:
        return self.n_steps * self.tau

    @property
    def step_indices(self) -> List[int]:
        return [state.n for state in self.states]

    @property
    def final(self) -> SchemeState:
        return self.states[-1]

    @property
    def stores_every_step(self) -> bool:
        return len(self.states) == self.n_steps + 1

    def append(self, state: SchemeState):
        self._index[state.n] = len(self.states)
        self.states.append(state)

    def has_step(self, n: int) -> bool:
        return n in self._index

    def state_at(self, n: int) -> SchemeState:
        if n not in self._index:
            raise MissingStepsError(f"step {n} is not stored (stride {self.store_every}, N = {self.n_steps})")
        return self.states[self._index[n]]

    @property
    def interiority_margin(self) -> float:
        """min of min(rho, 1 - rho) over stored states and every step report"""
        return min([state.distance_to_bounds for state in self.states]
                   + [report.min_distance_to_bounds for report in self.reports])

    @property
    def evolved_margin(self) -> float:
        """Same minimum over steps n >= 1 only; NaN for an empty run"""
        if not self.reports:
            return math.nan
        return min(report.min_distance_to_bounds for report in self.reports)

    def to_dataframe(self) -> pd.DataFrame:
        rows = []
        for n, report in enumerate(self.reports, start=1):
            rows.append({
                'step': n,
                't': n * self.tau,
                'mu_min': report.mu_min,
                'mu_max': report.mu_max,
                'rho_min': report.rho_min,
                'rho_max': report.rho_max,
                'newton_iters': report.newton.iterations,
                'cg_iters': report.linear.iterations,
                'mass_residual': report.mass_identity_residual,
                'xi_l2': report.xi_l2,
            })
        return pd.DataFrame(rows, columns=STEP_CSV_COLUMNS)

    def write_step_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_dataframe().to_csv(path, index=False, float_format='%.17g', encoding='utf-8')
        return path

    def write_snapshots(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        written = []
        for state in self.states:
            written.append(write_snapshot(directory / f"mu_{state.n:05d}.txt", state.mu))
            written.append(write_snapshot(directory / f"rho_{state.n:05d}.txt", state.rho))
        return written


def rho_step(state: SchemeState, tau: float, ps: PotentialSet,
             settings: Optional[SolverSettings] = None) -> Tuple[Field, NewtonReport]:
    """rho_{n+1} - tau L rho_{n+1} + tau f'(rho_{n+1}) = rho_n + tau mu_n g'(rho_n)"""
    settings = settings or SolverSettings()
    grid = state.grid
    b = Field(grid, state.rho.values + tau * state.mu.values * ps.g.d1(state.rho.values))
    return newton_barrier_solve(
        ps, tau, b, state.rho,
        abs_tol=settings.newton_abs_tol(grid),
        max_iters=settings.newton_max_iters,
        theta=settings.theta,
        cg_tol=settings.cg_tol,
        cg_max_iters=settings.cg_iteration_cap(grid),
    )


def mu_step(state: SchemeState, rho_next: Field, tau: float, ps: PotentialSet,
            settings: Optional[SolverSettings] = None) -> Tuple[Field, LinearSolveReport]:
    """((1 + gamma_n + gamma_{n+1}) I - tau L) mu_{n+1} = (1 + 2 gamma_n) mu_n"""
    settings = settings or SolverSettings()
    grid = state.grid
    if rho_next.grid != grid:
        raise GridError("rho_next lives on a different grid than the state")
    gamma = state.gamma.values
    coefficient = 1.0 + gamma + ps.g.value(rho_next.values)
    rhs = Field(grid, (1.0 + 2.0 * gamma) * state.mu.values)

    def operator(v):
        return coefficient * v - tau * apply_laplacian_values(grid, v)

    mu_next, report = cg_solve(operator, rhs, rel_tol=settings.cg_tol,
                               max_iters=settings.cg_iteration_cap(grid), x0=state.mu,
                               diagonal=coefficient - tau * laplacian_diagonal(grid))
    mu_linf = norm_linf(mu_next)
    if mu_next.min() < -POSITIVITY_TOL * mu_linf:
        raise PositivityError(
            f"mu_{state.n + 1} dips to {mu_next.min():.3e}, beyond -{POSITIVITY_TOL:.0e} * ||mu||_inf",
            mu_min=mu_next.min(), mu_linf=mu_linf)
    return mu_next, report


def mass_identity_residual(mu: Field, gamma: Field, mu_next: Field, gamma_next: Field) -> float:
    """Relative gap between int (1 + gamma_n + gamma_{n+1}) mu_{n+1} and int (1 + 2 gamma_n) mu_n"""
    volume = mu.grid.cell_volume
    after = float(np.sum((1.0 + gamma.values + gamma_next.values) * mu_next.values)) * volume
    before = float(np.sum((1.0 + 2.0 * gamma.values) * mu.values)) * volume
    gap = abs(after - before)
    return gap / abs(before) if before != 0.0 else gap


def advance(state: SchemeState, tau: float, ps: PotentialSet,
            settings: Optional[SolverSettings] = None) -> Tuple[SchemeState, StepReport]:
    rho_next, newton = rho_step(state, tau, ps, settings)
    mu_next, linear = mu_step(state, rho_next, tau, ps, settings)
    gamma_next = Field(state.grid, ps.g.value(rho_next.values))
    n = state.n + 1
    next_state = SchemeState(n=n, t=n * tau, mu=mu_next, rho=rho_next, gamma=gamma_next)
    report = StepReport(
        newton=newton,
        linear=linear,
        mu_min=mu_next.min(),
        mu_max=mu_next.max(),
        rho_min=rho_next.min(),
        rho_max=rho_next.max(),
        mass_identity_residual=mass_identity_residual(state.mu, state.gamma, mu_next, gamma_next),
        xi_l2=norm_l2(Field(state.grid, ps.f1.d1(rho_next.values))),
    )
    return next_state, report


def step_count(T: float, tau: float) -> int:
    """N = T / tau, which has to be an integer to within 1e-9"""
    if not tau > 0:
        raise ScheduleError(f"time step must be positive, got {tau}")
    if T < 0:
        raise ScheduleError(f"final time must be non-negative, got {T}")
    ratio = T / tau
    n_steps = int(round(ratio))
    if abs(ratio - n_steps) > 1e-9:
        raise ScheduleError(f"T / tau = {ratio:.12g} is not an integer")
    return n_steps


def validate_initial_data(grid: Grid, mu0: Field, rho0: Field):
    if mu0.grid != grid or rho0.grid != grid:
        raise GridError("initial data must live on the run grid")
    if mu0.min() < 0.0:
        raise InitialDataError(f"mu_0 must be nonnegative, min is {mu0.min():.6g}")
    if not (rho0.min() > 0.0 and rho0.max() < 1.0):
        raise InitialDataError(
            f"rho_0 must lie strictly inside (0,1), range is [{rho0.min():.6g}, {rho0.max():.6g}]")


def run(grid: Grid, ps: PotentialSet, init: Tuple[Field, Field], tau: float, T: float,
        store_every: int = 1, settings: Optional[SolverSettings] = None) -> Trajectory:
    """March N = T / tau steps from (mu_0, rho_0), storing every store_every-th state"""
    mu0, rho0 = init
    validate_initial_data(grid, mu0, rho0)
    check_admissible_tau(tau, ps)
    n_steps = step_count(T, tau)
    if store_every < 1:
        raise ValueError(f"store_every must be >= 1, got {store_every}")
    settings = settings or SolverSettings()

    state = SchemeState.initial(mu0, rho0, ps)
    trajectory = Trajectory(grid=grid, tau=tau, n_steps=n_steps, store_every=store_every, states=[state])
    logger.info(f"Running {n_steps} steps of tau = {tau:.6g} on {grid.describe()}")

    for n in range(n_steps):
        try:
            state, report = advance(state, tau, ps, settings)
        except (SolverError, PositivityError) as e:
            logger.error(f"Step {n + 1} failed: {e}")
            raise StepFailure(f"step {n + 1} of {n_steps} failed: {e}", trajectory, e) from e
        trajectory.reports.append(report)
        if state.n % store_every == 0 or state.n == n_steps:
            trajectory.append(state)
        logger.debug(f"Step {state.n}: newton {report.newton.iterations}, cg {report.linear.iterations}, "
                     f"mass residual {report.mass_identity_residual:.2e}")

    logger.info(f"Run finished at t = {trajectory.T:.6g}; interiority margin {trajectory.interiority_margin:.4g}, "
                f"{trajectory.evolved_margin:.4g} after step 0")
    return trajectory
