#!/usr/bin/env python3
"""
PhaseStep Diagnostics - Discrete identities, free energy and error norms

Everything here is recomputed from stored trajectory fields; no solver
internals are reused. The energy identity obtained by testing the mu equation
with mu_{n+1} and summing over steps holds exactly at the discrete level, so its
residual measures nothing but linear-solver error.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from phasestep_grid import Field, GridError, norm_l2, norm_v, seminorm_h1
from phasestep_potentials import PotentialSet
from phasestep_stepper import MissingStepsError, Trajectory

logger = logging.getLogger(__name__)

INTERPOLANT_KINDS = ('backward', 'forward', 'linear')
DIAGNOSTICS_CSV_COLUMNS = ['m', 'energy_identity_residual', 'free_energy', 'mu_mass_residual_cum']
ERROR_CSV_COLUMNS = ['tau', 'err_rho_h1H', 'err_rho_linfV', 'err_mu_linfH', 'err_mu_l2V', 'err_total']
NODE_SNAP = 1e-12

_GAUSS_POINTS, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(2)


class IntervalError(ValueError):
    tag = 'time-out-of-range'


class NestingError(ValueError):
    tag = 'tau-not-nested'


class Interpolants:
    """
    Backward / forward piecewise-constant and piecewise-linear reconstructions
    of nodes z_0..z_N on the lattice t_n = n tau.

    On I_n = ((n-1) tau, n tau): backward = z_n, forward = z_{n-1}, linear joins
    z_{n-1} and z_n. At a node the half-open conventions apply: backward is
    right-closed, forward is left-closed, and both are extended to the ends.
    """

    def __init__(self, nodes: Sequence, tau: float):
        if len(nodes) < 1:
            raise ValueError("need at least one node")
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        self.tau = float(tau)
        self.grid = nodes[0].grid if isinstance(nodes[0], Field) else None
        self._data = np.array([node.values if isinstance(node, Field) else np.asarray(node, dtype=float)
                               for node in nodes])
        self.n_intervals = len(nodes) - 1

    @property
    def T(self) -> float:
        return self.n_intervals * self.tau

    def wrap(self, values):
        if self.grid is not None:
            return Field(self.grid, values)
        return float(values) if np.ndim(values) == 0 else values

    def default_norm(self, z) -> float:
        if isinstance(z, Field):
            return norm_l2(z)
        return float(np.linalg.norm(np.ravel(z)))

    def _locate(self, t: float):
        """(position in units of tau, whether t sits on a node)"""
        if t < -NODE_SNAP * max(1.0, self.T) or t > self.T + NODE_SNAP * max(1.0, self.T):
            raise IntervalError(f"t = {t} outside [0, {self.T}]")
        position = min(max(t / self.tau, 0.0), float(self.n_intervals))
        nearest = int(round(position))
        if abs(position - nearest) <= NODE_SNAP * max(1.0, nearest):
            return nearest, True
        return position, False

    def _raw(self, kind: str, t: float) -> np.ndarray:
        position, on_node = self._locate(t)
        if kind == 'linear':
            if on_node:
                return self._data[position]
            n = int(math.floor(position))
            s = position - n
            return (1.0 - s) * self._data[n] + s * self._data[n + 1]
        if kind == 'backward':
            return self._data[position if on_node else int(math.ceil(position))]
        if kind == 'forward':
            return self._data[position if on_node else int(math.floor(position))]
        raise ValueError(f"unknown interpolant kind {kind!r}; expected one of {INTERPOLANT_KINDS}")

    def eval(self, kind: str, t: float):
        return self.wrap(self._raw(kind, t))

    def derivative(self, t: float):
        """Time derivative of the linear interpolant (left interval at interior nodes)"""
        if self.n_intervals < 1:
            raise ValueError("derivative needs at least two nodes")
        position, on_node = self._locate(t)
        n = max(position, 1) if on_node else int(math.ceil(position))
        return self.wrap((self._data[n] - self._data[n - 1]) / self.tau)

    def time_norm(self, kind: str, which: str = 'linf', norm: Optional[Callable] = None) -> float:
        """
        L^inf(0,T;Z) or L^2(0,T;Z) norm of an interpolant. The linear L^2 case
        assumes norm comes from an inner product (two-point Gauss is then exact).
        """
        norm = norm or self.default_norm
        sizes = [norm(self.wrap(z)) for z in self._data]
        if kind == 'backward':
            picked = sizes[1:]
        elif kind == 'forward':
            picked = sizes[:-1]
        elif kind == 'linear':
            if which == 'linf':
                return max(sizes)
            total = 0.0
            for n in range(1, self.n_intervals + 1):
                for x, w in zip(_GAUSS_POINTS, _GAUSS_WEIGHTS):
                    t = (n - 1 + 0.5 * (1.0 + x)) * self.tau
                    total += 0.5 * w * self.tau * norm(self.eval('linear', t)) ** 2
            return math.sqrt(total)
        else:
            raise ValueError(f"unknown interpolant kind {kind!r}")
        if not picked:
            return 0.0
        if which == 'linf':
            return max(picked)
        return math.sqrt(self.tau * sum(size ** 2 for size in picked))


def make_interpolants(fields: Sequence, tau: float) -> Interpolants:
    return Interpolants(fields, tau)


def _relative_spread(*values: float) -> float:
    scale = max(abs(v) for v in values)
    if scale == 0.0:
        return 0.0
    return (max(values) - min(values)) / scale


def interp_identity_linf_residual(fields: Sequence, tau: float, kind: str = 'backward',
                                  norm: Optional[Callable] = None) -> float:
    """
    ||zbar - zhat||_Linf = max_n ||z_{n+1} - z_n|| = tau ||d/dt zhat||_Linf,
    each side computed on its own; returns the max relative discrepancy.
    """
    interp = Interpolants(fields, tau)
    norm = norm or interp.default_norm
    if interp.n_intervals < 1:
        raise ValueError("need at least two nodes")
    midpoints = [(n - 0.5) * tau for n in range(1, interp.n_intervals + 1)]
    # the gap is linear in t on each interval and vanishes at one end, so sup = 2 * midpoint value
    sampled = max(2.0 * norm(interp.wrap(interp._raw(kind, t) - interp._raw('linear', t))) for t in midpoints)
    jumps = max(norm(interp.wrap(interp._data[n + 1] - interp._data[n])) for n in range(interp.n_intervals))
    derivative = tau * max(norm(interp.derivative(t)) for t in midpoints)
    return _relative_spread(sampled, jumps, derivative)


def interp_identity_l2_residual(fields: Sequence, tau: float, kind: str = 'backward',
                                norm: Optional[Callable] = None) -> float:
    """
    ||zbar - zhat||^2_L2 = (tau/3) sum ||z_{n+1} - z_n||^2 = (tau^2/3) ||d/dt zhat||^2_L2,
    the time integral on the left done exactly per interval by Gauss quadrature.
    """
    interp = Interpolants(fields, tau)
    norm = norm or interp.default_norm
    if interp.n_intervals < 1:
        raise ValueError("need at least two nodes")
    quadrature = 0.0
    derivative_sq = 0.0
    for n in range(1, interp.n_intervals + 1):
        for x, w in zip(_GAUSS_POINTS, _GAUSS_WEIGHTS):
            t = (n - 1 + 0.5 * (1.0 + x)) * tau
            gap = interp.wrap(interp._raw(kind, t) - interp._raw('linear', t))
            quadrature += 0.5 * w * tau * norm(gap) ** 2
        derivative_sq += tau * norm(interp.derivative((n - 0.5) * tau)) ** 2
    jumps = tau / 3.0 * sum(norm(interp.wrap(interp._data[n + 1] - interp._data[n])) ** 2
                            for n in range(interp.n_intervals))
    return _relative_spread(quadrature, jumps, tau ** 2 / 3.0 * derivative_sq)


# Energy and mass identities

def _weighted_square(weight: np.ndarray, u: Field) -> float:
    return float(np.dot(weight * u.values, u.values)) * u.grid.cell_volume


def _require_steps(traj: Trajectory, last: int):
    missing = [n for n in range(last + 1) if not traj.has_step(n)]
    if missing:
        raise MissingStepsError(
            f"steps {missing[:5]}{'...' if len(missing) > 5 else ''} are not stored; "
            f"the identity needs every step up to {last}")


def energy_identity_residuals(traj: Trajectory, last: Optional[int] = None) -> np.ndarray:
    """Relative residuals for m = 1..last of the summed energy identity"""
    last = traj.n_steps if last is None else last
    _require_steps(traj, last)
    first = traj.state_at(0)
    initial = _weighted_square(0.5 + first.gamma.values, first.mu)
    residuals = np.zeros(last)
    accumulated = 0.0
    for m in range(1, last + 1):
        before, after = traj.state_at(m - 1), traj.state_at(m)
        increment = Field(after.grid, after.mu.values - before.mu.values)
        accumulated += _weighted_square(0.5 + before.gamma.values, increment)
        accumulated += traj.tau * seminorm_h1(after.mu) ** 2
        lhs = _weighted_square(0.5 + after.gamma.values, after.mu) + accumulated
        gap = abs(lhs - initial)
        residuals[m - 1] = gap / initial if initial != 0.0 else gap
    return residuals


def energy_identity_residual(traj: Trajectory, ps: PotentialSet, m: int) -> float:
    """
    |LHS - RHS| / RHS of

        int (1/2 + gamma_m) mu_m^2 + tau^2 sum_{n<m} int (1/2 + gamma_n) |delta mu_n|^2
            + tau sum_{n<m} |mu_{n+1}|_1^2 = int (1/2 + gamma_0) mu_0^2
    """
    if not 1 <= m <= traj.n_steps:
        raise ValueError(f"m must lie in [1, {traj.n_steps}], got {m}")
    return float(energy_identity_residuals(traj, m)[m - 1])


def mass_identity_residuals(traj: Trajectory) -> np.ndarray:
    """Per-step relative gap of int (1 + gamma_n + gamma_{n+1}) mu_{n+1} = int (1 + 2 gamma_n) mu_n"""
    _require_steps(traj, traj.n_steps)
    residuals = np.zeros(traj.n_steps)
    for n in range(traj.n_steps):
        before, after = traj.state_at(n), traj.state_at(n + 1)
        volume = before.grid.cell_volume
        lhs = float(np.sum((1.0 + before.gamma.values + after.gamma.values) * after.mu.values)) * volume
        rhs = float(np.sum((1.0 + 2.0 * before.gamma.values) * before.mu.values)) * volume
        residuals[n] = abs(lhs - rhs) / abs(rhs) if rhs != 0.0 else abs(lhs - rhs)
    return residuals


def free_energy(mu: Field, rho: Field, ps: PotentialSet) -> float:
    """sum_i [-(1/2 + g(rho_i)) mu_i + f(rho_i)] |cell| + 1/2 |rho|_1^2"""
    if mu.grid != rho.grid:
        raise GridError("mu and rho live on different grids")
    if not (rho.min() > 0.0 and rho.max() < 1.0):
        raise ValueError("free energy needs rho strictly inside (0,1)")
    density = -(0.5 + ps.g.value(rho.values)) * mu.values + ps.f(rho.values)
    return float(np.sum(density)) * rho.grid.cell_volume + 0.5 * seminorm_h1(rho) ** 2


def diagnostics_table(traj: Trajectory, ps: PotentialSet) -> pd.DataFrame:
    """Per-step energy identity residual, free energy and cumulative mass residual"""
    energy = np.concatenate([[0.0], energy_identity_residuals(traj)])
    mass = np.concatenate([[0.0], np.cumsum(mass_identity_residuals(traj))])
    energies = [free_energy(state.mu, state.rho, ps) for state in traj.states]
    increases = int(np.sum(np.diff(energies) > 0.0))
    if increases:
        logger.warning(f"Free energy increased on {increases} of {traj.n_steps} steps (recorded only)")
    return pd.DataFrame({
        'm': np.arange(traj.n_steps + 1),
        'energy_identity_residual': energy,
        'free_energy': energies,
        'mu_mass_residual_cum': mass,
    }, columns=DIAGNOSTICS_CSV_COLUMNS)


# Error norms against a finer reference run

@dataclass(frozen=True)
class ErrorNorms:
    h1_0T_H: float
    linf_0T_V: float
    linf_0T_H: float
    l2_0T_V: float

    @property
    def rho_part(self) -> float:
        return self.h1_0T_H + self.linf_0T_V

    @property
    def mu_part(self) -> float:
        return self.linf_0T_H + self.l2_0T_V

    @property
    def total(self) -> float:
        return self.rho_part + self.mu_part


def refinement_ratio(coarse_tau: float, fine_tau: float) -> int:
    ratio = coarse_tau / fine_tau
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise NestingError(f"tau = {fine_tau:.6g} does not divide tau = {coarse_tau:.6g}")
    return k


def error_norms(traj: Trajectory, ref: Trajectory) -> ErrorNorms:
    """
    Norms of the difference of linear interpolants on the coarse nodes:
    rho in H1(0,T;H) and Linf(0,T;V), mu in Linf(0,T;H) and L2(0,T;V).
    """
    if traj.grid != ref.grid:
        raise GridError("trajectories live on different grids")
    k = refinement_ratio(traj.tau, ref.tau)
    if traj.n_steps * k != ref.n_steps:
        raise ValueError(f"final times differ: {traj.T:.12g} vs {ref.T:.12g}")
    _require_steps(traj, traj.n_steps)
    missing = [n * k for n in range(traj.n_steps + 1) if not ref.has_step(n * k)]
    if missing:
        raise MissingStepsError(f"reference run lacks steps {missing[:5]} needed at the coarse nodes")

    tau = traj.tau
    grid = traj.grid
    e_mu, e_rho = [], []
    for n in range(traj.n_steps + 1):
        mine, theirs = traj.state_at(n), ref.state_at(n * k)
        e_mu.append(Field(grid, mine.mu.values - theirs.mu.values))
        e_rho.append(Field(grid, mine.rho.values - theirs.rho.values))

    rate_sq = sum(tau * norm_l2(Field(grid, (e_rho[n + 1].values - e_rho[n].values) / tau)) ** 2
                  for n in range(traj.n_steps))
    return ErrorNorms(
        h1_0T_H=math.sqrt(rate_sq),
        linf_0T_V=max(norm_v(e) for e in e_rho),
        linf_0T_H=max(norm_l2(e) for e in e_mu),
        l2_0T_V=math.sqrt(tau * sum(norm_v(e) ** 2 for e in e_mu[1:])),
    )


def error_table(taus: Sequence[float], norms: Sequence[ErrorNorms]) -> pd.DataFrame:
    rows = [{
        'tau': tau,
        'err_rho_h1H': e.h1_0T_H,
        'err_rho_linfV': e.linf_0T_V,
        'err_mu_linfH': e.linf_0T_H,
        'err_mu_l2V': e.l2_0T_V,
        'err_total': e.total,
    } for tau, e in zip(taus, norms)]
    return pd.DataFrame(rows, columns=ERROR_CSV_COLUMNS)
