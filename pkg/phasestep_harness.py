#!/usr/bin/env python3
"""
PhaseStep Harness - Time-step refinement studies and observed orders

Each ladder run is compared with one fine reference run on the same grid, so
spatial error cancels and only the temporal order remains. Runs are independent
and go through a thread pool; the table is assembled at a single join point.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from phasestep_diagnostics import ErrorNorms, NestingError, error_norms, error_table, refinement_ratio
from phasestep_grid import Field, Grid
from phasestep_potentials import PotentialSet, check_admissible_tau
from phasestep_stepper import SolverSettings, StepFailure, run, step_count

logger = logging.getLogger(__name__)

UNDEFINED_RATE = '—'
MIN_REFERENCE_RATIO = 4
MARGIN_DEGRADATION = 0.5


class LadderError(ValueError):
    tag = 'ladder-not-nested'


class StudyError(RuntimeError):
    """A run of the study failed; the rows finished so far are attached"""
    tag = 'study-failed'

    def __init__(self, message: str, table: 'ConvergenceTable', cause: Exception):
        super().__init__(message)
        self.table = table
        self.cause = cause


def estimate_rates(errors: Sequence[float], taus: Sequence[float]) -> np.ndarray:
    """
    Observed orders p_k = ln(e_k / e_{k+1}) / ln(tau_k / tau_{k+1}) for adjacent pairs.
    A zero error or a repeated tau gives NaN (shown as an undefined rate).
    """
    errors = np.asarray(errors, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if errors.shape != taus.shape:
        raise ValueError(f"got {errors.size} errors for {taus.size} time steps")
    if np.any(taus <= 0) or not np.all(np.isfinite(taus)):
        raise ValueError("time steps must be positive and finite")
    if np.any(errors < 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors must be non-negative and finite")

    rates = np.full(max(errors.size - 1, 0), np.nan)
    for k in range(errors.size - 1):
        if errors[k] == 0.0 or errors[k + 1] == 0.0 or taus[k] == taus[k + 1]:
            continue
        rates[k] = math.log(errors[k] / errors[k + 1]) / math.log(taus[k] / taus[k + 1])
    return rates


def format_rate(rate: float) -> str:
    return UNDEFINED_RATE if math.isnan(rate) else f"{rate:.3f}"


def validate_ladder(taus: Sequence[float], tau_ref: float):
    """Non-increasing ladder, each step dividing the previous one, tau_ref dividing all of them"""
    if not taus:
        raise LadderError("the ladder needs at least one time step")
    if not tau_ref > 0 or any(not tau > 0 for tau in taus):
        raise LadderError("time steps must be positive")
    for coarse, fine in zip(taus, taus[1:]):
        if fine > coarse:
            raise LadderError(f"ladder must be decreasing, {fine:.6g} follows {coarse:.6g}")
        try:
            refinement_ratio(coarse, fine)
        except NestingError as e:
            raise LadderError(str(e)) from e
    if tau_ref > min(taus) / MIN_REFERENCE_RATIO:
        raise LadderError(
            f"reference tau {tau_ref:.6g} must be at most min(taus) / {MIN_REFERENCE_RATIO} = "
            f"{min(taus) / MIN_REFERENCE_RATIO:.6g}")
    for tau in taus:
        try:
            refinement_ratio(tau, tau_ref)
        except NestingError as e:
            raise LadderError(str(e)) from e


@dataclass
class ConvergenceTable:
    tau_ref: float
    taus: List[float] = field(default_factory=list)
    errors: List[ErrorNorms] = field(default_factory=list)
    margins: List[float] = field(default_factory=list)

    def append(self, tau: float, errors: ErrorNorms, margin: float):
        self.taus.append(tau)
        self.errors.append(errors)
        self.margins.append(margin)

    @property
    def totals(self) -> List[float]:
        return [e.total for e in self.errors]

    @property
    def rates(self) -> np.ndarray:
        return estimate_rates(self.totals, self.taus)

    def component_rates(self, part: str) -> np.ndarray:
        """Rates of 'rho_part', 'mu_part' or one of the four ErrorNorms fields"""
        return estimate_rates([getattr(e, part) for e in self.errors], self.taus)

    def tail_rates(self, k: int = 2) -> np.ndarray:
        return self.rates[-k:]

    def to_dataframe(self) -> pd.DataFrame:
        return error_table(self.taus, self.errors)

    def rates_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'tau_coarse': self.taus[:-1],
            'tau_fine': self.taus[1:],
            'rate_total': self.rates,
            'rate_rho': self.component_rates('rho_part'),
            'rate_mu': self.component_rates('mu_part'),
        })

    def summary(self) -> str:
        lines = [f"Reference tau = {self.tau_ref:.6g}",
                 f"{'tau':>12}  {'err_total':>12}  {'rate':>7}  {'margin':>10}"]
        rates = [math.nan] + list(self.rates)
        for tau, total, rate, margin in zip(self.taus, self.totals, rates, self.margins):
            shown = '' if tau == self.taus[0] else format_rate(rate)
            lines.append(f"{tau:>12.6g}  {total:>12.4e}  {shown:>7}  {margin:>10.4g}")
        return '\n'.join(lines)

    def log_anomalies(self):
        """Non-monotone errors and degrading interiority are recorded, never raised"""
        totals = self.totals
        for k in range(len(totals) - 1):
            if totals[k + 1] > totals[k]:
                logger.warning(f"Error grew from {totals[k]:.4e} to {totals[k + 1]:.4e} "
                               f"when refining tau {self.taus[k]:.6g} -> {self.taus[k + 1]:.6g}")
        if self.margins and min(self.margins) < MARGIN_DEGRADATION * self.margins[0]:
            logger.warning(f"Interiority margin degrades under refinement: "
                           f"{self.margins[0]:.4g} at the coarsest tau, {min(self.margins):.4g} at worst")


def convergence_study(grid: Grid, ps: PotentialSet, init: Tuple[Field, Field], T: float,
                      taus: Sequence[float], tau_ref: float,
                      settings: Optional[SolverSettings] = None,
                      max_workers: Optional[int] = None) -> ConvergenceTable:
    """Run every ladder tau and the reference concurrently and tabulate the errors"""
    taus = [float(tau) for tau in taus]
    validate_ladder(taus, tau_ref)
    check_admissible_tau(max(taus), ps)
    for tau in taus + [tau_ref]:
        step_count(T, tau)
    stride = refinement_ratio(min(taus), tau_ref)
    table = ConvergenceTable(tau_ref=tau_ref)
    logger.info(f"Convergence study: {len(taus)} time steps, reference tau = {tau_ref:.6g} (stride {stride})")

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        reference_run = pool.submit(run, grid, ps, init, tau_ref, T, stride, settings)
        ladder_runs = [pool.submit(run, grid, ps, init, tau, T, 1, settings) for tau in taus]
        try:
            reference = reference_run.result()
        except StepFailure as e:
            raise StudyError(f"reference run at tau = {tau_ref:.6g} failed: {e}", table, e) from e
        for tau, future in zip(taus, ladder_runs):
            try:
                trajectory = future.result()
            except StepFailure as e:
                raise StudyError(f"run at tau = {tau:.6g} failed: {e}", table, e) from e
            norms = error_norms(trajectory, reference)
            table.append(tau, norms, trajectory.evolved_margin)
            logger.info(f"tau = {tau:.6g}: err_total = {norms.total:.4e}, "
                        f"margin {trajectory.interiority_margin:.4g} ({trajectory.evolved_margin:.4g} after step 0)")

    table.log_anomalies()
    return table
