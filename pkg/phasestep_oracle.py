#!/usr/bin/env python3
"""
PhaseStep Oracle - Dense brute-force reference for small grids

Shares no code path with the production solvers: the Laplacian is assembled
cell by cell into a dense matrix, the rho equation goes to a generic root
finder in logit coordinates (every iterate maps back into (0,1)), and the mu
system is solved directly. Meant for a handful of cells only.
"""

import itertools
import logging
from typing import List, Tuple

import numpy as np
from scipy.optimize import brentq, root
from scipy.special import expit, logit

from phasestep_grid import Grid
from phasestep_potentials import PotentialSet

logger = logging.getLogger(__name__)

ROOT_TOL = 1e-14
RESIDUAL_TOL = 1e-12


def dense_laplacian(grid: Grid) -> np.ndarray:
    """Neumann stencil written out neighbour by neighbour (a wall neighbour is the cell itself)"""
    n = grid.n_cells
    matrix = np.zeros((n, n))
    strides = [1] if grid.dim == 1 else [1, grid.cells[0]]
    for index in itertools.product(*(range(c) for c in reversed(grid.cells))):
        position = tuple(reversed(index))
        i = sum(p * s for p, s in zip(position, strides))
        for axis, h in enumerate(grid.spacing):
            for step in (-1, 1):
                neighbour = position[axis] + step
                if 0 <= neighbour < grid.cells[axis]:
                    matrix[i, i + step * strides[axis]] += 1.0 / h ** 2
                    matrix[i, i] -= 1.0 / h ** 2
    return matrix


def dense_rho_step(ps: PotentialSet, tau: float, lap: np.ndarray,
                   rho: np.ndarray, mu: np.ndarray) -> np.ndarray:
    b = rho + tau * mu * ps.g.d1(rho)
    eye = np.eye(rho.size)

    def residual(s):
        r = expit(s)
        return r - tau * lap @ r + tau * ps.df(r) - b

    def jacobian(s):
        r = expit(s)
        dense = eye - tau * lap + tau * np.diag(ps.d2f(r))
        return dense * (r * (1.0 - r))[np.newaxis, :]

    solution = root(residual, logit(rho), jac=jacobian, method='hybr', options={'xtol': ROOT_TOL})
    # MINPACK may stop on its step tolerance at an exact root; judge by the residual
    worst = float(np.max(np.abs(residual(solution.x))))
    if worst > RESIDUAL_TOL:
        raise RuntimeError(f"dense rho step failed: residual {worst:.3e} ({solution.message})")
    if not solution.success:
        logger.debug(f"dense rho step accepted at residual {worst:.3e}: {solution.message}")
    return expit(solution.x)


def dense_mu_step(ps: PotentialSet, tau: float, lap: np.ndarray, rho: np.ndarray,
                  rho_next: np.ndarray, mu: np.ndarray) -> np.ndarray:
    gamma, gamma_next = ps.g.value(rho), ps.g.value(rho_next)
    system = np.diag(1.0 + gamma + gamma_next) - tau * lap
    return np.linalg.solve(system, (1.0 + 2.0 * gamma) * mu)


def dense_run(grid: Grid, ps: PotentialSet, mu0: np.ndarray, rho0: np.ndarray,
              tau: float, n_steps: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """All nodes (mu_n, rho_n), n = 0..n_steps"""
    lap = dense_laplacian(grid)
    mus, rhos = [np.asarray(mu0, dtype=float)], [np.asarray(rho0, dtype=float)]
    for _ in range(n_steps):
        rho_next = dense_rho_step(ps, tau, lap, rhos[-1], mus[-1])
        mus.append(dense_mu_step(ps, tau, lap, rhos[-1], rho_next, mus[-1]))
        rhos.append(rho_next)
    return mus, rhos


def dense_energy_identity_residual(grid: Grid, ps: PotentialSet, tau: float,
                                   mus: List[np.ndarray], rhos: List[np.ndarray], m: int) -> float:
    """Summed energy identity assembled term by term with the dense Laplacian"""
    lap = dense_laplacian(grid)
    volume = grid.cell_volume
    weights = [0.5 + ps.g.value(rho) for rho in rhos]
    lhs = float(np.sum(weights[m] * mus[m] ** 2)) * volume
    for n in range(m):
        lhs += float(np.sum(weights[n] * (mus[n + 1] - mus[n]) ** 2)) * volume
        lhs += tau * float(mus[n + 1] @ (-lap) @ mus[n + 1]) * volume
    rhs = float(np.sum(weights[0] * mus[0] ** 2)) * volume
    return abs(lhs - rhs) / rhs


def dense_free_energy(grid: Grid, ps: PotentialSet, mu: np.ndarray, rho: np.ndarray) -> float:
    total = 0.0
    for i in range(grid.n_cells):
        total += (-(0.5 + float(ps.g.value(rho[i]))) * mu[i] + float(ps.f(rho[i]))) * grid.cell_volume
    gradient = float(rho @ (-dense_laplacian(grid)) @ rho) * grid.cell_volume
    return total + 0.5 * gradient


def stationary_rho(ps: PotentialSet, mu_value: float, low: float = 1e-9, high: float = 1.0 - 1e-9) -> float:
    """r* with f'(r*) = mu_value * g'(r*); needs a sign change of the gap on [low, high]"""
    return brentq(lambda r: float(ps.df(r) - mu_value * ps.g.d1(r)), low, high, xtol=ROOT_TOL)
