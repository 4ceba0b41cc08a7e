"""
Interaction kernels, their horizons and subinteraction partitions, and the grid-aligned quadrature stencils
that realise the nonlocal integral.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import Callable
import logging

import numpy as np

from nonloclaw.grid_core import Grid, ShiftVector
from nonloclaw.utils import KernelError, HorizonError, stable_sum

LOGGER = logging.getLogger("nonloclaw.kernels")

EVEN_SYMMETRIC = 'even_symmetric'
ONE_SIDED = 'one_sided'
SYMMETRY_CLASSES = (EVEN_SYMMETRIC, ONE_SIDED)
PROFILE_NAMES = ('constant', 'triangle', 'truncated_quadratic', 'tabulated')
VALIDATION_POINTS_PER_AXIS = 25


@dataclass(frozen=True)
class KernelSpec:
    symmetry: str
    horizon: tuple
    profile: Callable = field(compare=False)
    partition: tuple
    profile_name: str = 'custom'

    def __post_init__(self):
        object.__setattr__(self, 'horizon', tuple(float(i) for i in np.atleast_1d(self.horizon)))
        object.__setattr__(self, 'partition', tuple(tuple(int(j) for j in i) for i in self.partition))

    @property
    def dim(self) -> int:
        return len(self.horizon)

    @property
    def k(self) -> int:
        return len(self.partition)


@dataclass(frozen=True, eq=False)
class Stencil:
    index: int
    shifts: np.ndarray
    weights: np.ndarray
    norm_factors: np.ndarray

    def __post_init__(self):
        for name in ('shifts', 'weights', 'norm_factors'):
            value = np.array(getattr(self, name))
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.weights)

    @property
    def entries(self):
        return [(ShiftVector(s), float(w), float(n))
                for s, w, n in zip(self.shifts, self.weights, self.norm_factors)]

    @property
    def coefficients(self) -> np.ndarray:
        """w_j / |beta_j|, the factor in front of each pair-flux difference"""
        return self.weights / self.norm_factors


def _normalised_radius(h, horizon):
    return np.sqrt(np.sum((np.asarray(h, dtype=float) / np.asarray(horizon)) ** 2, axis=-1))


def radial_profile(name: str, horizon, samples=None) -> Callable:
    """Named builtin profile as a function of the physical shift h (shape (..., dim)).

    Profiles depend on r = |h / horizon| and vanish for r > 1; they are not normalised since
    stencils renormalise their weights.
    """
    horizon = tuple(float(i) for i in np.atleast_1d(horizon))
    if name == 'constant':
        shape = lambda r: np.where(r <= 1.0, 1.0, 0.0)
    elif name == 'triangle':
        shape = lambda r: np.maximum(1.0 - r, 0.0)
    elif name == 'truncated_quadratic':
        shape = lambda r: np.maximum(1.0 - r ** 2, 0.0)
    elif name == 'tabulated':
        if samples is None or len(samples) < 2:
            raise KernelError("A tabulated profile needs at least two samples")
        nodes = np.linspace(0.0, 1.0, len(samples))
        values = np.asarray(samples, dtype=float)
        shape = lambda r: np.where(r <= 1.0, np.interp(r, nodes, values), 0.0)
    else:
        raise KernelError(f"Unknown kernel profile '{name}', choose one of {', '.join(PROFILE_NAMES)}")
    return lambda h: shape(_normalised_radius(h, horizon))


def orthant_restricted(profile: Callable) -> Callable:
    return lambda h: np.where(np.all(np.asarray(h) >= 0, axis=-1), profile(h), 0.0)


def kernel_spec(symmetry: str, horizon, profile='constant', partition=None, samples=None, dim=None):
    """Build a KernelSpec from a named profile; one-sided kernels get their support cut to the orthant"""
    horizon = tuple(float(i) for i in np.atleast_1d(horizon))
    if dim is not None and len(horizon) == 1:
        horizon = horizon * dim
    if partition is None:
        partition = (tuple(range(len(horizon))),)
    if callable(profile):
        function, name = profile, 'custom'
    else:
        function, name = radial_profile(profile, horizon, samples), profile
    if symmetry == ONE_SIDED:
        function = orthant_restricted(function)
    return KernelSpec(symmetry, horizon, function, partition, name)


def _validation_points(spec: KernelSpec, grid: Grid = None):
    axes = [np.linspace(-1.5 * d, 1.5 * d, VALIDATION_POINTS_PER_AXIS) for d in spec.horizon]
    if grid is not None and grid.dim == spec.dim:
        axes = [np.union1d(a, np.arange(-int(np.ceil(1.5 * d / dx)), int(np.ceil(1.5 * d / dx)) + 1) * dx)
                for a, d, dx in zip(axes, spec.horizon, grid.spacing)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([i.ravel() for i in mesh], axis=-1)


def _partition_problems(spec: KernelSpec):
    problems = list()
    seen = set()
    for i, axes in enumerate(spec.partition):
        if len(axes) == 0:
            problems.append(f"partition set {i} is empty")
        for axis in axes:
            if not 0 <= axis < spec.dim:
                problems.append(f"partition set {i} names axis {axis} outside 0..{spec.dim - 1}")
        overlap = seen.intersection(axes)
        if overlap:
            problems.append(f"partition sets overlap on axes {sorted(overlap)}")
        seen.update(axes)
    missing = set(range(spec.dim)) - seen
    if missing:
        problems.append(f"partition does not cover axes {sorted(missing)}")
    return problems


def validate(spec: KernelSpec, grid: Grid = None) -> KernelSpec:
    """Check the kernel hypotheses on a sample lattice, raising a KernelError listing every problem found"""
    problems = list()
    if spec.symmetry not in SYMMETRY_CLASSES:
        problems.append(f"unknown symmetry '{spec.symmetry}', choose one of {', '.join(SYMMETRY_CLASSES)}")
    if any(not (np.isfinite(d) and d > 0) for d in spec.horizon):
        problems.append(f"horizons must be positive, got {spec.horizon}")
    problems += _partition_problems(spec)
    if problems:
        raise KernelError(problems)
    points = _validation_points(spec, grid)
    values = np.asarray(spec.profile(points), dtype=float)
    if not np.all(np.isfinite(values)):
        problems.append("profile is not finite on the sample lattice")
    if np.any(values < 0):
        worst = points[np.argmin(values)]
        problems.append(f"profile is negative at h={tuple(worst)}")
    outside = np.any(np.abs(points) > np.asarray(spec.horizon) * (1 + 1e-12), axis=-1)
    if np.any(values[outside] != 0):
        problems.append("profile support leaves the horizon box")
    if spec.symmetry == EVEN_SYMMETRIC:
        mirrored = np.asarray(spec.profile(-points), dtype=float)
        if not np.allclose(values, mirrored, rtol=1e-12, atol=1e-14):
            problems.append("even_symmetric profile is not even")
    elif spec.symmetry == ONE_SIDED:
        off_orthant = np.any(points < 0, axis=-1)
        if np.any(values[off_orthant] != 0):
            problems.append("one_sided profile has support outside the nonnegative orthant")
    if problems:
        raise KernelError(problems)
    return spec


def horizon_cells(spec: KernelSpec, grid: Grid, axis: int) -> int:
    delta, dx = spec.horizon[axis], grid.spacing[axis]
    if delta < dx * (1 - 1e-12):
        raise HorizonError(f"horizon {delta!r} on axis {axis} is smaller than the grid spacing {dx!r}; "
                           f"the horizon must be at least one cell")
    ratio = delta / dx
    cells = int(round(ratio))
    if abs(ratio - cells) > 1e-9 * max(1.0, ratio):
        raise HorizonError(f"horizon {delta!r} on axis {axis} must be an integer multiple of the "
                           f"grid spacing {dx!r}")
    if cells >= grid.cells[axis]:
        raise HorizonError(f"horizon of {cells} cells on axis {axis} does not fit the "
                           f"{grid.cells[axis]}-cell periodic axis")
    return cells


def build_stencil(spec: KernelSpec, grid: Grid, i: int) -> Stencil:
    """Midpoint quadrature of subinteraction i on grid-aligned nodes, weights renormalised to unit sum"""
    if spec.dim != grid.dim:
        raise KernelError(f"kernel is {spec.dim}D but the grid is {grid.dim}D")
    if not 0 <= i < spec.k:
        raise KernelError(f"subinteraction index {i} outside 0..{spec.k - 1}")
    active = spec.partition[i]
    ranges = list()
    for axis in range(grid.dim):
        if axis not in active:
            ranges.append([0])
            continue
        m = horizon_cells(spec, grid, axis)
        ranges.append(range(-m, m + 1) if spec.symmetry == EVEN_SYMMETRIC else range(0, m + 1))
    shifts = np.array([s for s in product(*ranges) if any(s)], dtype=int)
    h = shifts * np.asarray(grid.spacing)
    volume = float(np.prod([grid.spacing[a] for a in active]))
    raw = np.asarray(spec.profile(h), dtype=float) * volume
    keep = raw > 0
    if not np.any(keep):
        raise HorizonError(f"kernel profile vanishes on every lattice node of subinteraction {i}; "
                           f"the horizon is not resolved by the grid")
    shifts, h, raw = shifts[keep], h[keep], raw[keep]
    weights = raw / stable_sum(raw)
    return Stencil(i, shifts, weights, np.linalg.norm(h, axis=-1))


def build_stencils(spec: KernelSpec, grid: Grid):
    return [build_stencil(spec, grid, i) for i in range(spec.k)]


def harmonic_mass(stencil: Stencil) -> float:
    """Discrete integral of omega / |beta|; finite mass is the Lipschitz regime of the operator"""
    return stable_sum(stencil.coefficients)


def first_moment(stencil: Stencil, grid: Grid) -> np.ndarray:
    h = stencil.shifts * np.asarray(grid.spacing)
    return np.array([stable_sum(stencil.weights * h[:, axis]) for axis in range(grid.dim)])
