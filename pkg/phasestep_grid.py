#!/usr/bin/env python3
"""
PhaseStep Grid - Uniform cell-centered meshes and discrete function spaces

Box domains in one or two dimensions, the Neumann Laplacian built from mirrored
ghost cells, and the discrete L2 / H1 products standing in for H = L2 and V = H1.
Cells are ordered lexicographically with x running fastest.
"""

import logging
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

SUPPORTED_DIMENSIONS = (1, 2)
SNAPSHOT_HEADER = re.compile(r'^#\s*grid\s+dim=(\d+)\s+cells=([0-9,]+)\s+lengths=(\S+)\s*$')


class GridError(ValueError):
    """Invalid grid description or fields living on different grids"""
    tag = 'grid-error'


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on the box [0, L_1] x ... x [0, L_dim]"""

    dim: int
    cells: Tuple[int, ...]
    lengths: Tuple[float, ...]

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMENSIONS:
            raise GridError(f"unsupported dimension: {self.dim}")
        if len(self.cells) != self.dim or len(self.lengths) != self.dim:
            raise GridError(
                f"expected {self.dim} entries for cells and lengths, got {len(self.cells)} and {len(self.lengths)}"
            )
        for n in self.cells:
            if int(n) != n or n < 2:
                raise GridError(f"cells per axis must be integers >= 2, got {n}")
        for length in self.lengths:
            if not math.isfinite(length) or length <= 0:
                raise GridError(f"domain lengths must be positive and finite, got {length}")

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(length / n for length, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def shape(self) -> Tuple[int, ...]:
        """Array shape of a reshaped field; x is the last (fastest) axis"""
        return tuple(reversed(self.cells))

    def cell_centers(self, axis: int = 0) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Flat coordinate arrays (x, [y]) in cell order"""
        if self.dim == 1:
            return (self.cell_centers(0),)
        y, x = np.meshgrid(self.cell_centers(1), self.cell_centers(0), indexing='ij')
        return (x.ravel(), y.ravel())

    def describe(self) -> str:
        cells = 'x'.join(str(n) for n in self.cells)
        lengths = 'x'.join(f"{length:g}" for length in self.lengths)
        return f"{self.dim}D grid {cells} cells on {lengths}"


def build_grid(dim: int, cells_per_axis: Sequence[int], lengths: Sequence[float]) -> Grid:
    """Build a uniform cell-centered grid, validating every size"""
    if dim not in SUPPORTED_DIMENSIONS:
        raise GridError(f"unsupported dimension: {dim}")
    cells = tuple(int(n) if float(n).is_integer() else n for n in cells_per_axis)
    grid = Grid(dim=int(dim), cells=cells, lengths=tuple(float(length) for length in lengths))
    logger.debug(f"Built {grid.describe()}")
    return grid


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-centered scalar values on a grid; immutable once built"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.grid.n_cells:
            raise GridError(f"field has {values.size} values but the grid has {self.grid.n_cells} cells")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite (NaN or Inf found)")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> 'Field':
        return cls(grid, np.full(grid.n_cells, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> 'Field':
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]) -> 'Field':
        """Sample func(x[, y]) at the cell centers"""
        values = np.broadcast_to(func(*grid.coordinates()), (grid.n_cells,))
        return cls(grid, values)

    def with_values(self, values: np.ndarray) -> 'Field':
        return Field(self.grid, values)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def __len__(self) -> int:
        return self.values.size


def _check_grid(grid: Grid, *fields: Field):
    for u in fields:
        if u.grid != grid:
            raise GridError(f"grid mismatch: field lives on {u.grid.describe()}, expected {grid.describe()}")


def apply_laplacian_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Neumann Laplacian of a flat value array, ghost value = adjacent interior value"""
    u = np.asarray(values, dtype=np.float64).reshape(grid.shape)
    out = np.zeros_like(u)
    for axis, h in enumerate(grid.spacing):
        array_axis = u.ndim - 1 - axis
        pad = [(1, 1) if a == array_axis else (0, 0) for a in range(u.ndim)]
        padded = np.pad(u, pad, mode='edge')

        def along(s):
            return tuple(s if a == array_axis else slice(None) for a in range(u.ndim))

        out += (padded[along(slice(None, -2))] - 2.0 * u + padded[along(slice(2, None))]) / h ** 2
    return out.ravel()


def neumann_laplacian_apply(grid: Grid, u: Field) -> Field:
    """Second-order central stencil per axis with zero normal difference at the walls"""
    _check_grid(grid, u)
    return Field(grid, apply_laplacian_values(grid, u.values))


def _neumann_matrix_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format='csr') / h ** 2


@lru_cache(maxsize=32)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """The same stencil as a sparse matrix (Kronecker sum, x fastest)"""
    if grid.dim == 1:
        return _neumann_matrix_1d(grid.cells[0], grid.spacing[0])
    nx, ny = grid.cells
    hx, hy = grid.spacing
    lap_x = _neumann_matrix_1d(nx, hx)
    lap_y = _neumann_matrix_1d(ny, hy)
    return (sp.kron(sp.identity(ny), lap_x) + sp.kron(lap_y, sp.identity(nx))).tocsr()


def laplacian_diagonal(grid: Grid) -> np.ndarray:
    return laplacian_matrix(grid).diagonal()


# Discrete inner products and norms

def inner_l2(u: Field, v: Field) -> float:
    _check_grid(u.grid, v)
    return float(np.dot(u.values, v.values) * u.grid.cell_volume)


def norm_l2(u: Field) -> float:
    return math.sqrt(inner_l2(u, u))


def seminorm_h1(u: Field) -> float:
    """sqrt(<-Lu, u>); operator-consistent so that summation by parts is exact"""
    energy = -float(np.dot(apply_laplacian_values(u.grid, u.values), u.values)) * u.grid.cell_volume
    return math.sqrt(max(energy, 0.0))


def norm_v(u: Field) -> float:
    return math.sqrt(norm_l2(u) ** 2 + seminorm_h1(u) ** 2)


def norm_linf(u: Field) -> float:
    return float(np.max(np.abs(u.values)))


def face_seminorm_h1(u: Field) -> float:
    """H1 seminorm summed over interior faces, independent of the Laplacian"""
    grid = u.grid
    arr = u.as_array()
    total = 0.0
    for axis, h in enumerate(grid.spacing):
        jumps = np.diff(arr, axis=arr.ndim - 1 - axis) / h
        total += float(np.sum(jumps ** 2)) * grid.cell_volume
    return math.sqrt(total)


# Snapshot text format

def snapshot_header(grid: Grid) -> str:
    cells = ','.join(str(n) for n in grid.cells)
    lengths = ','.join(repr(float(length)) for length in grid.lengths)
    return f"grid dim={grid.dim} cells={cells} lengths={lengths}"


def write_snapshot(path: Union[str, Path], field: Field) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, field.values, fmt='%.17g', header=snapshot_header(field.grid), comments='# ')
    return path


def read_snapshot(path: Union[str, Path]) -> Field:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip()
    match = SNAPSHOT_HEADER.match(header)
    if not match:
        raise GridError(f"{path}: missing or malformed snapshot header: {header!r}")
    dim = int(match.group(1))
    cells = [int(n) for n in match.group(2).split(',')]
    lengths = [float(length) for length in match.group(3).split(',')]
    grid = build_grid(dim, cells, lengths)
    values = np.loadtxt(path, comments='#', ndmin=1)
    return Field(grid, values)
