"""
Periodic uniform Cartesian grids in one or two dimensions, fields sampled on them, lattice shifts,
difference quotients and the cell-volume weighted discrete norms.
"""
from dataclasses import dataclass
from functools import reduce
from itertools import product
import operator

import numpy as np
import pandas as pd
from scipy import sparse

from nonloclaw.utils import GridError, NonFiniteError, stable_sum, atomic_write

MAX_DIM = 2
FIELD_CSV_HEADER = '# dim,cells,spacing'


@dataclass(frozen=True)
class Grid:
    cells: tuple
    spacing: tuple
    origin: tuple = None

    def __post_init__(self):
        cells = tuple(int(i) for i in np.atleast_1d(self.cells))
        spacing = tuple(float(i) for i in np.atleast_1d(self.spacing))
        if len(spacing) == 1 and len(cells) > 1:
            spacing = spacing * len(cells)
        if not 1 <= len(cells) <= MAX_DIM:
            raise GridError(f"Grids must have 1 to {MAX_DIM} axes, got {len(cells)}")
        if len(spacing) != len(cells):
            raise GridError("One spacing per axis is required")
        if any(i < 2 for i in cells):
            raise GridError(f"Every axis needs at least 2 cells, got {cells}")
        if any(not (np.isfinite(i) and i > 0) for i in spacing):
            raise GridError(f"Spacings must be strictly positive, got {spacing}")
        origin = (0.0,) * len(cells) if self.origin is None else \
            tuple(float(i) for i in np.atleast_1d(self.origin))
        if len(origin) != len(cells):
            raise GridError("One origin coordinate per axis is required")
        object.__setattr__(self, 'cells', cells)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'origin', origin)

    @classmethod
    def from_extent(cls, cells, extent, origin=None):
        cells = tuple(int(i) for i in np.atleast_1d(cells))
        extent = np.atleast_1d(np.asarray(extent, dtype=float))
        if len(extent) == 1:
            extent = np.repeat(extent, len(cells))
        return cls(cells, tuple(extent / np.asarray(cells)), origin)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def size(self) -> int:
        return reduce(operator.mul, self.cells, 1)

    @property
    def extent(self) -> tuple:
        return tuple(n * dx for n, dx in zip(self.cells, self.spacing))

    @property
    def cell_volume(self) -> float:
        return reduce(operator.mul, self.spacing, 1.0)


@dataclass(frozen=True, eq=False)
class GridField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise GridError(f"Field has {values.size} values but the grid has {self.grid.size} cells")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(values))[0])
            raise NonFiniteError(f"Field value at cell {bad} is not finite")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    def with_values(self, values):
        return GridField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _values_of(other))

    def __sub__(self, other):
        return self.with_values(self.values - _values_of(other))

    def __mul__(self, other):
        return self.with_values(self.values * _values_of(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _values_of(other):
    return other.values if isinstance(other, GridField) else other


@dataclass(frozen=True)
class ShiftVector:
    offsets: tuple

    def __post_init__(self):
        object.__setattr__(self, 'offsets', tuple(int(i) for i in np.atleast_1d(self.offsets)))

    def __neg__(self):
        return ShiftVector(tuple(-i for i in self.offsets))

    def __add__(self, other):
        return ShiftVector(tuple(a + b for a, b in zip(self.offsets, other.offsets)))

    @property
    def is_zero(self) -> bool:
        return not any(self.offsets)

    def length(self, grid: Grid) -> float:
        return float(np.linalg.norm(np.multiply(self.offsets, grid.spacing)))

    def validate_for(self, grid: Grid):
        if len(self.offsets) != grid.dim:
            raise GridError(f"Shift {self.offsets} does not match a {grid.dim}D grid")
        for offset, cells in zip(self.offsets, grid.cells):
            if abs(offset) >= cells:
                raise GridError(f"Shift component {offset} must be smaller than the {cells} cells of its axis")
        return self


def constant_field(grid: Grid, value: float) -> GridField:
    return GridField(grid, np.full(grid.shape, float(value)))


def coordinates(grid: Grid):
    """Cell centre coordinates, one array of grid.shape per axis"""
    axes = [o + (np.arange(n) + 0.5) * dx for o, n, dx in zip(grid.origin, grid.cells, grid.spacing)]
    return np.meshgrid(*axes, indexing='ij')


def periodic_distance(x, center, extent):
    """Signed distance x - center wrapped into [-extent/2, extent/2)"""
    return (np.asarray(x) - center + extent / 2) % extent - extent / 2


def shift(u: GridField, s: ShiftVector) -> GridField:
    """result(x) = u(x + s dx), periodic; a pure permutation of the values"""
    s.validate_for(u.grid)
    return u.with_values(np.roll(u.values, tuple(-i for i in s.offsets), axis=tuple(range(u.grid.dim))))


def shift_values(values: np.ndarray, offsets) -> np.ndarray:
    """Array form of `shift` used in the inner loops"""
    return np.roll(values, tuple(-i for i in offsets), axis=tuple(range(values.ndim)))


def diff_quotient(u: GridField, s: ShiftVector) -> GridField:
    if s.is_zero:
        raise GridError("Difference quotients need a nonzero shift")
    return u.with_values((shift(u, s).values - u.values) / s.length(u.grid))


def norm(u: GridField, p=1) -> float:
    p = float(p)
    if not p >= 1:
        raise ValueError(f"Norm exponent must be >= 1 or inf, got {p}")
    if np.isinf(p):
        return float(np.max(np.abs(u.values)))
    return (u.grid.cell_volume * stable_sum(np.abs(u.values) ** p)) ** (1 / p)


def mass(u: GridField) -> float:
    return u.grid.cell_volume * stable_sum(u.values)


def positive_part(u: GridField) -> GridField:
    return u.with_values(np.maximum(u.values, 0.0))


def negative_part(u: GridField) -> GridField:
    return u.with_values(np.maximum(-u.values, 0.0))


def inner(u: GridField, v: GridField) -> float:
    return u.grid.cell_volume * stable_sum(u.values * v.values)


def translation_modulus(u: GridField, s: ShiftVector) -> float:
    """L1 modulus of continuity: sum |u(x+s) - u(x)| weighted by the cell volume"""
    return norm(shift(u, s) - u, 1)


def lattice_shifts(grid: Grid, max_offset=None):
    """All nonzero lattice shifts with components bounded by cells - 1, or by max_offset when given"""
    ranges = []
    for n in grid.cells:
        m = n - 1 if max_offset is None else min(int(max_offset), n - 1)
        ranges.append(range(-m, m + 1))
    return [ShiftVector(i) for i in product(*ranges) if any(i)]


def laplacian_matrix(grid: Grid) -> sparse.csr_matrix:
    """Standard 3-point (1D) / 5-point (2D) periodic Laplacian on C-ordered flat fields"""
    identity = sparse.identity(grid.size, format='csr')
    index = np.arange(grid.size).reshape(grid.shape)
    lap = sparse.csr_matrix((grid.size, grid.size))
    for axis, dx in enumerate(grid.spacing):
        for step in (1, -1):
            offsets = [0] * grid.dim
            offsets[axis] = step
            neighbours = shift_values(index, offsets).ravel()
            # duplicates (two cells per axis) are summed by the coo conversion
            hop = sparse.coo_matrix((np.ones(grid.size), (np.arange(grid.size), neighbours)),
                                    shape=(grid.size, grid.size)).tocsr()
            lap = lap + (hop - identity) / dx ** 2
    return lap.tocsr()


def field_to_frame(u: GridField) -> pd.DataFrame:
    index = np.indices(u.grid.shape).reshape(u.grid.dim, -1)
    frame = pd.DataFrame({f"i{axis}": index[axis] for axis in range(u.grid.dim)})
    frame['value'] = [repr(float(i)) for i in u.values.ravel()]
    return frame


def field_to_csv_text(u: GridField) -> str:
    grid = u.grid
    meta = '# %s,%s,%s' % (grid.dim, ';'.join(str(i) for i in grid.cells),
                           ';'.join(repr(i) for i in grid.spacing))
    origin = '# origin,%s' % ';'.join(repr(i) for i in grid.origin)
    body = field_to_frame(u).to_csv(index=False, lineterminator='\n')
    return '\n'.join([FIELD_CSV_HEADER, meta, origin, body])


def write_field_csv(u: GridField, file_path):
    atomic_write(file_path, field_to_csv_text(u))


def read_field_csv(file_path) -> GridField:
    with open(file_path) as f:
        header = [f.readline().strip() for _ in range(3)]
    if header[0] != FIELD_CSV_HEADER:
        raise GridError(f"{file_path} is not a field CSV, expected header '{FIELD_CSV_HEADER}'")
    dim, cells, spacing = header[1].lstrip('# ').split(',')
    origin = header[2].lstrip('# ').split(',')[1]
    grid = Grid(tuple(int(i) for i in cells.split(';')),
                tuple(float(i) for i in spacing.split(';')),
                tuple(float(i) for i in origin.split(';')))
    if grid.dim != int(dim):
        raise GridError(f"{file_path} declares dim {dim} but lists {grid.dim} axes")
    frame = pd.read_csv(file_path, skiprows=3, float_precision='round_trip')
    if len(frame) != grid.size:
        raise GridError(f"{file_path} has {len(frame)} rows for {grid.size} cells")
    values = np.empty(grid.shape)
    index = tuple(frame[f"i{axis}"].to_numpy() for axis in range(grid.dim))
    values[index] = frame["value"].to_numpy(dtype=float)
    return GridField(grid, values)
