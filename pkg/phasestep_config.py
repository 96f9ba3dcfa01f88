#!/usr/bin/env python3
"""
PhaseStep Config - Run configuration, text format and initial-data presets

The format is line-oriented `section.key = value` text with `#` comments. Every
key has a default, so an empty file is the default scenario: logistic potential
(alpha1 = 1, alpha2 = 0.5, alpha3 = 0), identity coupling, 128 cells on [0,1],
T = 0.25 and tau = T/256 with cosine initial data.
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from phasestep_grid import Field, Grid, GridError, build_grid, read_snapshot
from phasestep_potentials import (G_CHOICES, AdmissibilityError, LogisticParams, PotentialSet,
                                  check_admissible_tau, make_logistic_potentials)
from phasestep_stepper import InitialDataError, SolverSettings, validate_initial_data

logger = logging.getLogger(__name__)

PRESETS = ('cosine', 'rough', 'snapshot')
OUTPUT_FORMATS = ('csv', 'excel')
DEFAULT_T = 0.25
DEFAULT_STEPS = 256
INTERIOR_MARGIN = 1e-6


class ConfigError(ValueError):
    """Bad configuration; names the line and key when they are known"""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None,
                 tag: str = 'config-error'):
        where = ' '.join(part for part in (f"line {line}:" if line else '', f"{key}:" if key else '') if part)
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.key = key
        self.tag = tag


@dataclass(frozen=True)
class GridConfig:
    dim: int = 1
    cells: Tuple[int, ...] = (128,)
    lengths: Tuple[float, ...] = (1.0,)


@dataclass(frozen=True)
class PotentialConfig:
    alpha1: float = 1.0
    alpha2: float = 0.5
    alpha3: float = 0.0
    g: str = 'identity'


@dataclass(frozen=True)
class TimeConfig:
    T: float = DEFAULT_T
    tau: float = DEFAULT_T / DEFAULT_STEPS
    ladder: Tuple[int, ...] = (16, 32, 64, 128, 256)
    ref_steps: int = 2048


@dataclass(frozen=True)
class InitConfig:
    preset: str = 'cosine'
    rho_mean: float = 0.5
    rho_amp: float = 0.2
    mu_mean: float = 1.0
    mu_amp: float = 0.5
    rough_amp: float = 0.05
    rough_mode: int = 16
    mu_file: str = ''
    rho_file: str = ''


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    cg_tol: float = 1e-12
    cg_max_iters: int = 0
    theta: float = 0.9


@dataclass(frozen=True)
class OutputConfig:
    dir: str = ''
    store_every: int = 1
    format: str = 'csv'


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    init: InitConfig = field(default_factory=InitConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def build_grid(self) -> Grid:
        return build_grid(self.grid.dim, self.grid.cells, self.grid.lengths)

    def logistic_params(self) -> LogisticParams:
        p = self.potential
        return LogisticParams(p.alpha1, p.alpha2, p.alpha3)

    def build_potentials(self) -> PotentialSet:
        return make_logistic_potentials(self.logistic_params(), g_choice=self.potential.g)

    def solver_settings(self) -> SolverSettings:
        s = self.solver
        return SolverSettings(newton_tol=s.newton_tol, newton_max_iters=s.newton_max_iters,
                              cg_tol=s.cg_tol, cg_max_iters=s.cg_max_iters or None, theta=s.theta)

    def ladder_taus(self) -> list:
        return [self.time.T / n for n in self.time.ladder]

    def reference_tau(self) -> float:
        return self.time.T / self.time.ref_steps


# Value converters

def _to_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _to_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(_to_int(part) for part in text.split(','))


def _float_list(text: str) -> Tuple[float, ...]:
    return tuple(_to_float(part) for part in text.split(','))


SECTIONS = {
    'grid': GridConfig,
    'potential': PotentialConfig,
    'time': TimeConfig,
    'init': InitConfig,
    'solver': SolverConfig,
    'output': OutputConfig,
}

CONVERTERS: Dict[str, Callable[[str], object]] = {
    'grid.dim': _to_int,
    'grid.cells': _int_list,
    'grid.lengths': _float_list,
    'potential.alpha1': _to_float,
    'potential.alpha2': _to_float,
    'potential.alpha3': _to_float,
    'potential.g': str,
    'time.T': _to_float,
    'time.tau': _to_float,
    'time.ladder': _int_list,
    'time.ref_steps': _to_int,
    'init.preset': str,
    'init.rho_mean': _to_float,
    'init.rho_amp': _to_float,
    'init.mu_mean': _to_float,
    'init.mu_amp': _to_float,
    'init.rough_amp': _to_float,
    'init.rough_mode': _to_int,
    'init.mu_file': str,
    'init.rho_file': str,
    'solver.newton_tol': _to_float,
    'solver.newton_max_iters': _to_int,
    'solver.cg_tol': _to_float,
    'solver.cg_max_iters': _to_int,
    'solver.theta': _to_float,
    'output.dir': str,
    'output.store_every': _to_int,
    'output.format': str,
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text; missing keys take their defaults"""
    overrides: Dict[str, Dict[str, object]] = {name: {} for name in SECTIONS}
    lines: Dict[str, int] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number, tag='parse-error')
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in CONVERTERS:
            raise ConfigError("unknown key", line=number, key=key, tag='unknown-key')
        if key in lines:
            raise ConfigError(f"already set on line {lines[key]}", line=number, key=key, tag='duplicate-key')
        try:
            converted = CONVERTERS[key](value)
        except ValueError as e:
            raise ConfigError(f"bad value {value!r}: {e}", line=number, key=key, tag='bad-value') from e
        section, name = key.split('.', 1)
        overrides[section][name] = converted
        lines[key] = number

    time = overrides['time']
    if 'tau' not in time:
        T = time.get('T', DEFAULT_T)
        time['tau'] = T / DEFAULT_STEPS if T > 0 else DEFAULT_T / DEFAULT_STEPS

    config = RunConfig(**{name: replace(cls(), **overrides[name]) for name, cls in SECTIONS.items()})
    validate_config(config, lines)
    return config


def load_config(path) -> RunConfig:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config(f.read())


def validate_config(config: RunConfig, lines: Optional[Dict[str, int]] = None):
    """Check every constraint, raising ConfigError naming the key and bound"""
    lines = lines or {}

    def fail(key: str, message: str, tag: str = 'bad-value'):
        raise ConfigError(message, line=lines.get(key), key=key, tag=tag)

    try:
        config.build_grid()
    except GridError as e:
        fail('grid.cells', str(e), tag=GridError.tag)

    p = config.potential
    for name in ('alpha1', 'alpha2', 'alpha3'):
        if getattr(p, name) < 0:
            fail(f'potential.{name}', f"must be >= 0, got {getattr(p, name)}")
    if not p.alpha1 > 0:
        fail('potential.alpha1', f"must be > 0 for the barrier property, got {p.alpha1}")
    if p.g != 'identity':
        fail('potential.g', f"only 'identity' can be configured from text (known: {', '.join(G_CHOICES)})")
    ps = config.build_potentials()

    t = config.time
    if t.T < 0:
        fail('time.T', f"must be >= 0, got {t.T}")
    if not t.tau > 0:
        fail('time.tau', f"must be > 0, got {t.tau}")
    if any(n < 1 for n in t.ladder):
        fail('time.ladder', f"step counts must be >= 1, got {list(t.ladder)}")
    if t.ref_steps < 1:
        fail('time.ref_steps', f"must be >= 1, got {t.ref_steps}")
    try:
        check_admissible_tau(t.tau, ps)
    except AdmissibilityError as e:
        fail('time.tau', str(e), tag=AdmissibilityError.tag)
    if t.T > 0:
        try:
            check_admissible_tau(t.T / min(t.ladder), ps)
        except AdmissibilityError as e:
            fail('time.ladder', str(e), tag=AdmissibilityError.tag)

    i = config.init
    if i.preset not in PRESETS:
        fail('init.preset', f"must be one of {', '.join(PRESETS)}, got {i.preset!r}")
    if i.preset == 'snapshot':
        for key in ('mu_file', 'rho_file'):
            if not getattr(i, key):
                fail(f'init.{key}', "required by the snapshot preset")
    else:
        rough = abs(i.rough_amp) if i.preset == 'rough' else 0.0
        low = i.rho_mean - abs(i.rho_amp) - rough
        high = i.rho_mean + abs(i.rho_amp) + rough
        if low < INTERIOR_MARGIN or high > 1.0 - INTERIOR_MARGIN:
            fail('init.rho_amp', f"rho_0 spans [{low:.6g}, {high:.6g}], which leaves "
                                 f"[{INTERIOR_MARGIN:g}, {1 - INTERIOR_MARGIN:g}]", tag=InitialDataError.tag)
        if i.mu_mean - abs(i.mu_amp) < 0:
            fail('init.mu_amp', f"mu_0 dips to {i.mu_mean - abs(i.mu_amp):.6g} < 0", tag=InitialDataError.tag)
        if i.rough_mode < 1:
            fail('init.rough_mode', f"must be >= 1, got {i.rough_mode}")

    s = config.solver
    for key in ('newton_tol', 'cg_tol'):
        if not getattr(s, key) > 0:
            fail(f'solver.{key}', f"must be > 0, got {getattr(s, key)}")
    if s.newton_max_iters < 1:
        fail('solver.newton_max_iters', f"must be >= 1, got {s.newton_max_iters}")
    if s.cg_max_iters < 0:
        fail('solver.cg_max_iters', f"must be >= 0 (0 = ten times the cell count), got {s.cg_max_iters}")
    if not 0 < s.theta < 1:
        fail('solver.theta', f"must lie in (0,1), got {s.theta}")

    o = config.output
    if o.store_every < 1:
        fail('output.store_every', f"must be >= 1, got {o.store_every}")
    if o.format not in OUTPUT_FORMATS:
        fail('output.format', f"must be one of {', '.join(OUTPUT_FORMATS)}, got {o.format!r}")


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ','.join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Every key in parse order, floats via repr so that parsing gives the same config back"""
    lines = []
    for name in SECTIONS:
        section = getattr(config, name)
        lines.append(f"# {name}")
        for f in fields(section):
            lines.append(f"{name}.{f.name} = {_format_value(getattr(section, f.name))}")
    return '\n'.join(lines) + '\n'


# Initial data

def _profile(grid: Grid, mode: int = 1) -> np.ndarray:
    """prod_k cos(mode * pi * x_k / L_k), which has zero normal derivative on the box"""
    values = np.ones(grid.n_cells)
    for x, length in zip(grid.coordinates(), grid.lengths):
        values = values * np.cos(mode * math.pi * x / length)
    return values


def build_initial_data(config: RunConfig, grid: Optional[Grid] = None,
                       base_dir: Optional[Path] = None) -> Tuple[Field, Field]:
    """(mu_0, rho_0) from the configured preset, checked against the run grid"""
    grid = grid or config.build_grid()
    i = config.init
    if i.preset == 'snapshot':
        base_dir = Path(base_dir or '.')
        try:
            mu0 = read_snapshot(base_dir / i.mu_file)
            rho0 = read_snapshot(base_dir / i.rho_file)
        except OSError as e:
            raise InitialDataError(f"cannot read snapshot: {e}") from e
        if mu0.grid != grid or rho0.grid != grid:
            raise InitialDataError(f"snapshot grid does not match the configured {grid.describe()}")
    else:
        shape = _profile(grid)
        rho = i.rho_mean + i.rho_amp * shape
        if i.preset == 'rough':
            rho = rho + i.rough_amp * _profile(grid, i.rough_mode)
        mu0 = Field(grid, i.mu_mean + i.mu_amp * shape)
        rho0 = Field(grid, rho)
    validate_initial_data(grid, mu0, rho0)
    logger.debug(f"Initial data ({i.preset}): rho in [{rho0.min():.4g}, {rho0.max():.4g}], "
                 f"mu in [{mu0.min():.4g}, {mu0.max():.4g}]")
    return mu0, rho0
