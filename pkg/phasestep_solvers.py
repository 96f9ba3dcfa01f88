#!/usr/bin/env python3
"""
PhaseStep Solvers - Inner solvers for the two elliptic problems of a time step

The mu problem is linear, symmetric and positive definite and is handed to a
Jacobi-preconditioned conjugate gradient. The rho problem is the Euler-Lagrange
equation of a strictly convex functional with a logarithmic barrier; it is
solved by damped Newton that keeps every iterate strictly inside (0,1).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from phasestep_grid import (Field, GridError, apply_laplacian_values, inner_l2,
                            laplacian_diagonal)
from phasestep_potentials import PotentialSet, check_admissible_tau

logger = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-12
DEFAULT_NEWTON_TOL = 1e-10
DEFAULT_NEWTON_MAX_ITERS = 50
DEFAULT_THETA = 0.9
MIN_STEP_LENGTH = 1e-14


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    final_relative_residual: float


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    final_residual_l2: float
    min_distance_to_bounds: float
    damped_steps: int
    cg_iterations: int = 0


class SolverError(RuntimeError):
    """Inner solver gave up; the report of the failed solve is attached"""
    tag = 'solver-failure'

    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report


class LinearSolveError(SolverError):
    tag = 'cg-not-converged'


class NewtonSolveError(SolverError):
    tag = 'newton-failure'


Operator = Union[Callable[[np.ndarray], np.ndarray], object]


def cg_solve(apply: Operator, rhs: Field, rel_tol: float = DEFAULT_CG_TOL,
             max_iters: Optional[int] = None, x0: Optional[Field] = None,
             diagonal: Optional[np.ndarray] = None) -> Tuple[Field, LinearSolveReport]:
    """
    Conjugate gradients for A x = rhs with A symmetric positive definite.

    apply maps a flat value array to A times it (a callable, or a matrix /
    LinearOperator). diagonal, when given, is used as a Jacobi preconditioner.
    Convergence is accepted on the true residual ||rhs - A x|| / ||rhs||.
    """
    grid = rhs.grid
    matvec = apply if callable(apply) else aslinearoperator(apply).matvec
    if max_iters is None:
        max_iters = 10 * grid.n_cells
    b = rhs.values
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return Field.zeros(grid), LinearSolveReport(iterations=0, final_relative_residual=0.0)

    if x0 is not None:
        if x0.grid != grid:
            raise GridError("initial guess lives on a different grid than the right-hand side")
        x = x0.values.copy()
    else:
        x = np.zeros_like(b)
    inv_diag = None if diagonal is None else 1.0 / np.asarray(diagonal, dtype=float)

    def precondition(r):
        return r if inv_diag is None else inv_diag * r

    iterations = 0
    r = b - matvec(x)
    while True:
        relative = float(np.linalg.norm(r)) / b_norm
        if relative <= rel_tol:
            break
        if iterations >= max_iters:
            report = LinearSolveReport(iterations, relative)
            raise LinearSolveError(
                f"CG did not reach relative residual {rel_tol:.1e} in {max_iters} iterations "
                f"(reached {relative:.3e})", report)

        z = precondition(r)
        p = z.copy()
        rz = float(np.dot(r, z))
        while iterations < max_iters:
            q = matvec(p)
            curvature = float(np.dot(p, q))
            if curvature <= 0.0:
                raise LinearSolveError("operator is not positive definite",
                                       LinearSolveReport(iterations, relative))
            alpha = rz / curvature
            x += alpha * p
            r -= alpha * q
            iterations += 1
            if np.linalg.norm(r) <= rel_tol * b_norm:
                break
            z = precondition(r)
            rz_next = float(np.dot(r, z))
            p = z + (rz_next / rz) * p
            rz = rz_next
        # recursive residual drifts; restart from the true one
        r = b - matvec(x)

    return Field(grid, x), LinearSolveReport(iterations=iterations, final_relative_residual=relative)


def newton_residual_values(ps: PotentialSet, tau: float, b: Field, rho: np.ndarray) -> np.ndarray:
    return rho - tau * apply_laplacian_values(b.grid, rho) + tau * ps.df(rho) - b.values


def newton_residual(ps: PotentialSet, tau: float, b: Field, rho: Field) -> Field:
    """F(rho) = rho - tau L rho + tau f'(rho) - b"""
    return Field(b.grid, newton_residual_values(ps, tau, b, rho.values))


def newton_jacobian_apply(ps: PotentialSet, tau: float, rho: Field, v: Field) -> Field:
    """Directional derivative of F at rho along v"""
    grid = rho.grid
    values = v.values - tau * apply_laplacian_values(grid, v.values) + tau * ps.d2f(rho.values) * v.values
    return Field(grid, values)


def newton_barrier_solve(ps: PotentialSet, tau: float, b: Field, init: Field,
                         abs_tol: Optional[float] = None,
                         max_iters: int = DEFAULT_NEWTON_MAX_ITERS,
                         theta: float = DEFAULT_THETA,
                         cg_tol: float = DEFAULT_CG_TOL,
                         cg_max_iters: Optional[int] = None) -> Tuple[Field, NewtonReport]:
    """
    Solve rho - tau L rho + tau f'(rho) = b with 0 < rho < 1 in every cell.

    Each Newton step is capped by the fraction-to-boundary rule (theta times the
    distance to the nearest bound) and then halved until ||F|| decreases.
    """
    check_admissible_tau(tau, ps)
    grid = b.grid
    if init.grid != grid:
        raise GridError("initial guess lives on a different grid than the right-hand side")
    rho = init.values.copy()
    if not (np.all(rho > 0.0) and np.all(rho < 1.0)):
        raise ValueError("Newton initial guess must lie strictly inside (0,1)")
    if abs_tol is None:
        abs_tol = DEFAULT_NEWTON_TOL * math.sqrt(grid.volume)

    lap_diag = laplacian_diagonal(grid)
    volume = grid.cell_volume

    def residual_norm(values):
        return math.sqrt(float(np.dot(values, values)) * volume)

    def distance(values):
        return float(min(values.min(), (1.0 - values).min()))

    F = newton_residual_values(ps, tau, b, rho)
    res = residual_norm(F)
    iterations = damped = cg_total = 0

    def report():
        return NewtonReport(iterations=iterations, final_residual_l2=res,
                            min_distance_to_bounds=distance(rho), damped_steps=damped,
                            cg_iterations=cg_total)

    while res > abs_tol:
        if iterations >= max_iters:
            raise NewtonSolveError(
                f"Newton did not reach ||F|| <= {abs_tol:.1e} in {max_iters} iterations "
                f"(reached {res:.3e})", report())

        curvature = tau * ps.d2f(rho)

        def jacobian(v, curvature=curvature):
            return v - tau * apply_laplacian_values(grid, v) + curvature * v

        try:
            step, linear = cg_solve(jacobian, Field(grid, -F), rel_tol=cg_tol,
                                    max_iters=cg_max_iters, diagonal=1.0 - tau * lap_diag + curvature)
        except LinearSolveError as e:
            raise NewtonSolveError(f"inner CG failed: {e}", report()) from e
        cg_total += linear.iterations
        delta = step.values

        to_bound = np.where(delta < 0.0, rho, 1.0 - rho)
        crossing = np.abs(delta) >= to_bound
        alpha = 1.0
        if crossing.any():
            alpha = min(1.0, theta * float(np.min(to_bound[crossing] / np.abs(delta[crossing]))))

        while True:
            if alpha < MIN_STEP_LENGTH:
                raise NewtonSolveError(f"damping collapse: step length {alpha:.1e} below {MIN_STEP_LENGTH:.0e}",
                                       report())
            trial = rho + alpha * delta
            if np.all(trial > 0.0) and np.all(trial < 1.0):
                F_trial = newton_residual_values(ps, tau, b, trial)
                res_trial = residual_norm(F_trial)
                if res_trial < res:
                    break
            alpha *= 0.5

        if alpha < 1.0:
            damped += 1
        rho, F, res = trial, F_trial, res_trial
        iterations += 1
        if distance(rho) <= 0.0:
            raise NewtonSolveError("iterate left the open interval (0,1)", report())
        logger.debug(f"Newton iteration {iterations}: ||F|| = {res:.3e}, step length {alpha:.3g}")

    return Field(grid, rho), report()


# Variational functionals whose minimizers the two sub-steps compute

def _gradient_energy(v: Field) -> float:
    return -float(np.dot(apply_laplacian_values(v.grid, v.values), v.values)) * v.grid.cell_volume


def rho_functional(ps: PotentialSet, tau: float, b: Field, v: Field) -> float:
    """J2(v) = tau/2 |v|_1^2 + 1/2 ||v||^2 + tau int f(v) - int b v"""
    f_integral = float(np.sum(ps.f(v.values))) * v.grid.cell_volume
    return 0.5 * tau * _gradient_energy(v) + 0.5 * inner_l2(v, v) + tau * f_integral - inner_l2(b, v)


def mu_functional(coefficient: Field, tau: float, rhs: Field, v: Field) -> float:
    """J1(v) = tau/2 |v|_1^2 + 1/2 int c v^2 - int rhs v"""
    weighted = float(np.dot(coefficient.values * v.values, v.values)) * v.grid.cell_volume
    return 0.5 * tau * _gradient_energy(v) + 0.5 * weighted - inner_l2(rhs, v)
