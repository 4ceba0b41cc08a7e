"""
Time evolution with the nonlocal operator: the implicit Euler (Crandall-Liggett) chain of resolvent solves, the
explicit comparison scheme, forced evolution by splitting, exact local references and the local-limit study.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from os import path
from typing import Callable
import json
import logging
import os

import numpy as np
import pandas as pd

from nonloclaw.grid_core import (Grid, GridField, coordinates, periodic_distance, norm, field_to_frame,
                                 write_field_csv, read_field_csv)
from nonloclaw.kernels import ONE_SIDED, kernel_spec, validate
from nonloclaw.fluxes import FluxPair, with_range, invariant_range, max_wave_speed
from nonloclaw.nonlocal_operator import OperatorAssembly, assemble, apply_B, check_cfl, cfl_constant
from nonloclaw.resolvent import ResolventOptions, SolveReport, solve_resolvent
from nonloclaw.utils import GridError, NonFiniteError, SolverDivergenceError, atomic_write, file_sha256

LOGGER = logging.getLogger("nonloclaw.semigroup")

IMPLICIT = 'implicit'
EXPLICIT = 'explicit'
FORCED = 'forced'
SCHEMES = (IMPLICIT, EXPLICIT, FORCED)
STUDY_CFL = 0.9
REFERENCE_SUBSAMPLES = 16
MANIFEST_NAME = 'manifest.json'
CHAIN_NAME = 'chain.csv'
CHAIN_COLUMN = 'u%05d'
INITIAL_PROFILES = ('riemann', 'gaussian', 'indicator', 'random', 'constant')


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: tuple
    states: tuple
    scheme: str
    step: float
    reports: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'times', tuple(float(i) for i in self.times))
        object.__setattr__(self, 'states', tuple(self.states))
        object.__setattr__(self, 'reports', tuple(self.reports))
        if self.scheme not in SCHEMES:
            raise ValueError(f"Unknown scheme '{self.scheme}', choose one of {', '.join(SCHEMES)}")
        if len(self.times) != len(self.states) or len(self.times) == 0:
            raise ValueError(f"A trajectory needs one state per time, got {len(self.states)} states "
                             f"for {len(self.times)} times")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("Trajectory times must start at 0 and increase")
        if any(i.grid != self.states[0].grid for i in self.states):
            raise GridError("Trajectory states live on different grids")

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def final(self) -> GridField:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return self.times[-1]

    @property
    def time_steps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def residual_budget(self) -> float:
        """Sum of the final L1 residuals of every resolvent solve along the trajectory"""
        return float(sum(i.final_residual for i in self.reports))


@dataclass
class ForcingSpec:
    """Source term g(t, u) returning a field or an array of the grid's shape"""
    g: Callable
    lipschitz_in_u: float = 0.0
    growth_bound: Callable = None

    def __call__(self, t: float, u: GridField) -> GridField:
        value = self.g(t, u)
        values = np.asarray(value.values if isinstance(value, GridField) else value, dtype=float)
        values = np.broadcast_to(values, u.grid.shape)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"Forcing returned a non-finite field at t={t!r}")
        return GridField(u.grid, values)

    def validate(self, grid: Grid, T: float, samples: int = 5):
        """Sampled check of |g(t, u)|_1 <= c(t) (1 + |u|_1) on constant fields"""
        if not self.lipschitz_in_u >= 0:
            raise ValueError(f"lipschitz_in_u must be nonnegative, got {self.lipschitz_in_u}")
        for t in np.linspace(0.0, T, samples):
            for level in (0.0, 1.0, -1.0):
                u = GridField(grid, np.full(grid.shape, level))
                value = norm(self(t, u), 1)
                if self.growth_bound is not None and value > self.growth_bound(t) * (1 + norm(u, 1)) * (1 + 1e-12):
                    raise ValueError(f"Forcing exceeds its growth bound at t={t!r}: "
                                     f"{value!r} > {self.growth_bound(t)!r} (1 + |u|_1)")
        return self


def step_times(T: float, step: float) -> np.ndarray:
    """0, step, 2 step, ... ending exactly at T; the last step is shortened when step does not divide T"""
    if not (np.isfinite(T) and T > 0):
        raise ValueError(f"The final time must be positive, got {T}")
    if not (np.isfinite(step) and step > 0):
        raise ValueError(f"Time steps must be positive, got {step}")
    count = int(np.ceil(T / step * (1 - 1e-12)))
    times = np.arange(count + 1) * step
    times[-1] = T
    return times


def _require_finite(u0: GridField):
    if not np.all(np.isfinite(u0.values)):
        raise NonFiniteError("Initial data is not finite")


def _resolvent_chain(op, u0, times, opts, forcing, logger):
    states, reports = [u0], list()
    u = u0
    for m, (previous, current) in enumerate(zip(times[:-1], times[1:]), start=1):
        dt = current - previous
        rhs = u if forcing is None else u + dt * forcing(previous, u).values
        try:
            u, report = solve_resolvent(op, rhs, dt, opts, logger=logger)
        except SolverDivergenceError as err:
            logger.critical(f"Resolvent solve failed at step {m} (t={current!r})")
            raise SolverDivergenceError(str(err), err.residual_history, step=m) from err
        states.append(u)
        reports.append(report)
    return states, reports


def evolve_implicit(op: OperatorAssembly, u0: GridField, T: float, eps: float, opts: ResolventOptions = None,
                    logger=LOGGER) -> Trajectory:
    """u^m = (I + eps B_h)^-1 u^{m-1}; no step size restriction"""
    _require_finite(u0)
    times = step_times(T, eps)
    logger.info(f"Implicit evolution to T={T!r} with {len(times) - 1} resolvent steps of {eps!r}")
    states, reports = _resolvent_chain(op, u0, times, opts, None, logger)
    return Trajectory(times, states, IMPLICIT, eps, reports)


def evolve_explicit(op: OperatorAssembly, u0: GridField, T: float, dt: float, logger=LOGGER) -> Trajectory:
    """Forward Euler chain u^{m+1} = u^m - dt B_h u^m under the monotonicity condition"""
    _require_finite(u0)
    check_cfl(op, dt)
    times = step_times(T, dt)
    logger.info(f"Explicit evolution to T={T!r} with {len(times) - 1} steps of {dt!r}")
    states = [u0]
    for previous, current in zip(times[:-1], times[1:]):
        u = states[-1]
        states.append(u - (current - previous) * apply_B(op, u, logger).values)
    return Trajectory(times, states, EXPLICIT, dt)


def evolve_forced(op: OperatorAssembly, u0: GridField, T: float, dt: float, forcing: ForcingSpec,
                  opts: ResolventOptions = None, logger=LOGGER) -> Trajectory:
    """u^m = (I + dt B_h)^-1 (u^{m-1} + dt g(t_{m-1}, u^{m-1})), the left-endpoint splitting"""
    _require_finite(u0)
    forcing.validate(u0.grid, T)
    times = step_times(T, dt)
    logger.info(f"Forced evolution to T={T!r} with {len(times) - 1} steps of {dt!r}")
    states, reports = _resolvent_chain(op, u0, times, opts, forcing, logger)
    return Trajectory(times, states, FORCED, dt, reports)


def semigroup_defect(op: OperatorAssembly, u0: GridField, t: float, s: float, eps: float,
                     opts: ResolventOptions = None, logger=LOGGER) -> float:
    """|S(s) S(t) u0 - S(t + s) u0|_1 for the implicit chain; t and s are multiples of eps"""
    first = evolve_implicit(op, u0, t, eps, opts, logger).final
    composed = evolve_implicit(op, first, s, eps, opts, logger).final
    direct = evolve_implicit(op, u0, t + s, eps, opts, logger).final
    return norm(composed - direct, 1)


def _local_riemann(local, speed, u_left, u_right, d, t):
    if t == 0:
        return np.where(d < 0, u_left, u_right)
    xi = d / t
    if local == 'advection':
        return np.where(xi < speed, u_left, u_right)
    if local != 'burgers':
        raise ValueError(f"No exact Riemann solution for local flux '{local}'")
    if u_left > u_right:
        # Rankine-Hugoniot
        return np.where(xi < 0.5 * (u_left + u_right), u_left, u_right)
    return np.clip(xi, u_left, u_right)


def _subsampled_points(grid: Grid, subsamples: int):
    (x,) = coordinates(grid)
    dx = grid.spacing[0]
    offsets = ((np.arange(subsamples) + 0.5) / subsamples - 0.5) * dx
    return x[:, None] + offsets[None, :]


def riemann_reference(flux: FluxPair, u_left: float, u_right: float, x0: float, grid: Grid, t: float,
                      subsamples: int = REFERENCE_SUBSAMPLES) -> GridField:
    """Cell averages of the exact entropy solution of the periodic Riemann problem.

    The initial data is u_left on [origin, x0) and u_right on [x0, origin + extent), so there are two jumps:
    at x0 and at the seam. Each point follows the Riemann solution of its nearest jump, which is exact as long
    as the two wave fans have not met.
    """
    if grid.dim != 1:
        raise GridError("Riemann references are one-dimensional")
    points = _subsampled_points(grid, subsamples)
    extent, origin = grid.extent[0], grid.origin[0]
    speed = flux.params.get('speed', 1.0)
    to_jump = periodic_distance(points, x0, extent)
    to_seam = periodic_distance(points, origin, extent)
    at_jump = _local_riemann(flux.local, speed, u_left, u_right, to_jump, t)
    at_seam = _local_riemann(flux.local, speed, u_right, u_left, to_seam, t)
    values = np.where(np.abs(to_jump) <= np.abs(to_seam), at_jump, at_seam)
    return GridField(grid, values.mean(axis=1))


def transport_reference(profile: Callable, speed: float, grid: Grid, t: float,
                        subsamples: int = REFERENCE_SUBSAMPLES) -> GridField:
    """Cell averages of profile(x - speed t) on the torus"""
    if grid.dim != 1:
        raise GridError("Transport references are one-dimensional")
    points = _subsampled_points(grid, subsamples)
    origin, extent = grid.origin[0], grid.extent[0]
    moved = origin + np.mod(points - speed * t - origin, extent)
    return GridField(grid, np.asarray(profile(moved), dtype=float).mean(axis=1))


def gaussian_profile(center, width, amplitude=1.0, base=0.0, extent=None):
    """Periodic gaussian bump in one or more coordinates"""
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def profile(*x):
        squared = 0.0
        for axis, xi in enumerate(x):
            d = np.asarray(xi) - center[axis] if extent is None else \
                periodic_distance(xi, center[axis], extent[axis])
            squared = squared + d ** 2
        return base + amplitude * np.exp(-squared / (2 * width ** 2))
    return profile


def initial_condition(grid: Grid, profile: str, seed=None, **params) -> GridField:
    """Named initial data: riemann, gaussian, indicator, random (seed required) or constant"""
    x = coordinates(grid)
    if profile == 'riemann':
        if grid.dim != 1:
            raise GridError("Riemann initial data is one-dimensional")
        u_left, u_right = float(params.get('u_left', 1.0)), float(params.get('u_right', 0.0))
        x0 = float(params.get('x0', grid.origin[0] + grid.extent[0] / 2))
        points = _subsampled_points(grid, REFERENCE_SUBSAMPLES)
        return GridField(grid, np.where(points < x0, u_left, u_right).mean(axis=1))
    if profile == 'gaussian':
        center = params.get('center', [o + e / 2 for o, e in zip(grid.origin, grid.extent)])
        function = gaussian_profile(center, float(params.get('width', 0.1)), float(params.get('amplitude', 1.0)),
                                    float(params.get('base', 0.0)), grid.extent)
        return GridField(grid, function(*x))
    if profile == 'indicator':
        lower = np.atleast_1d(params.get('lower', [o + e / 4 for o, e in zip(grid.origin, grid.extent)]))
        upper = np.atleast_1d(params.get('upper', [o + 3 * e / 4 for o, e in zip(grid.origin, grid.extent)]))
        inside = np.ones(grid.shape, dtype=bool)
        for axis, xi in enumerate(x):
            inside &= (xi >= lower[axis]) & (xi < upper[axis])
        return GridField(grid, np.where(inside, float(params.get('value', 1.0)), float(params.get('base', 0.0))))
    if profile == 'random':
        if seed is None:
            raise ValueError("Random initial data needs a seed")
        rng = np.random.default_rng(int(seed))
        return GridField(grid, rng.uniform(float(params.get('low', -1.0)), float(params.get('high', 1.0)),
                                           grid.shape))
    if profile == 'constant':
        return GridField(grid, np.full(grid.shape, float(params.get('value', 0.0))))
    raise ValueError(f"Unknown initial profile '{profile}', choose one of {', '.join(INITIAL_PROFILES)}")


def check_wrap_time(flux: FluxPair, grid: Grid, T: float):
    """Periodic images must not reach the comparison window before T"""
    speed = max_wave_speed(flux)
    if speed > 0 and T >= min(grid.extent) / (2 * speed):
        raise ValueError(f"T={T!r} lets waves of speed {speed!r} wrap around the {min(grid.extent)!r} period; "
                         f"use T < {min(grid.extent) / (2 * speed)!r}")


def _study_run(flux, profile, u0, reference, T, delta, symmetry, dt=None, samples=None, logger=LOGGER):
    spec = validate(kernel_spec(symmetry, delta, profile, samples=samples, dim=u0.grid.dim), u0.grid)
    op = assemble(spec, flux, u0.grid)
    dt = STUDY_CFL / cfl_constant(op) if dt is None else dt
    final = evolve_explicit(op, u0, T, dt, logger).final
    return norm(final - reference, 1), dt


def _study_reference(flux, u0_spec, grid, t):
    kind = u0_spec.get('profile', 'riemann')
    if kind == 'riemann':
        x0 = u0_spec.get('x0', grid.origin[0] + grid.extent[0] / 2)
        return riemann_reference(flux, u0_spec['u_left'], u0_spec['u_right'], x0, grid, t)
    if kind == 'gaussian':
        if flux.local != 'advection':
            raise ValueError("The transport oracle needs an advection flux")
        function = gaussian_profile(u0_spec.get('center', grid.origin[0] + grid.extent[0] / 2),
                                    u0_spec.get('width', 0.1), u0_spec.get('amplitude', 1.0),
                                    u0_spec.get('base', 0.0), grid.extent)
        return transport_reference(function, flux.params.get('speed', 1.0), grid, t)
    raise ValueError(f"No exact oracle for initial profile '{kind}'")


def local_limit_study(flux: FluxPair, profile, u0_spec: dict, T: float, deltas, grid: Grid,
                      symmetry: str = ONE_SIDED, threads: int = 1, logger=LOGGER, samples=None) -> pd.DataFrame:
    """L1 errors against an exact local solution as the horizon shrinks.

    Each horizon is run with the explicit scheme at 0.9 of its admissible step. The table closes with a
    'baseline' row: the classical local scheme (single nearest-neighbour interaction) on a grid coarsened to
    the smallest horizon, run with the smallest horizon's time step.
    """
    if grid.dim != 1:
        raise GridError("The local-limit study is one-dimensional")
    deltas = [float(i) for i in deltas]
    initial = _study_reference(flux, u0_spec, grid, 0.0)
    flux = with_range(flux, *invariant_range(initial.values))
    check_wrap_time(flux, grid, T)
    reference = _study_reference(flux, u0_spec, grid, T)
    logger.info(f"Local-limit study of {flux.name} with horizons {deltas}")

    def run(delta):
        return _study_run(flux, profile, initial, reference, T, delta, symmetry, samples=samples, logger=logger)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run, deltas))
    else:
        results = [run(i) for i in deltas]
    rows = list()
    for i, (delta, (error, _)) in enumerate(zip(deltas, results)):
        order = np.nan if i == 0 or error <= 0 or results[i - 1][0] <= 0 else \
            float(np.log(results[i - 1][0] / error) / np.log(deltas[i - 1] / delta))
        rows.append({'kind': 'nonlocal', 'delta': delta, 'delta_cells': int(round(delta / grid.spacing[0])),
                     'l1_error': error, 'order': order})
    finest = int(np.argmin(deltas))
    ratio = int(round(deltas[finest] / grid.spacing[0]))
    if grid.cells[0] % ratio == 0:
        coarse = Grid(grid.cells[0] // ratio, deltas[finest], grid.origin)
        coarse_initial = _study_reference(flux, u0_spec, coarse, 0.0)
        coarse_reference = _study_reference(flux, u0_spec, coarse, T)
        spec = validate(kernel_spec(ONE_SIDED, deltas[finest], 'constant', dim=1), coarse)
        dt = min(results[finest][1], 1.0 / cfl_constant(assemble(spec, flux, coarse)))
        baseline, _ = _study_run(flux, 'constant', coarse_initial, coarse_reference, T, deltas[finest],
                                 ONE_SIDED, dt, logger=logger)
        rows.append({'kind': 'baseline', 'delta': deltas[finest], 'delta_cells': 1, 'l1_error': baseline,
                     'order': np.nan})
    else:
        logger.warning(f"Grid of {grid.cells[0]} cells cannot be coarsened by {ratio}; no baseline row")
    table = pd.DataFrame(rows, columns=['kind', 'delta', 'delta_cells', 'l1_error', 'order'])
    for _, row in table.iterrows():
        logger.info(f"{row['kind']} delta={row['delta']!r}: L1 error {row['l1_error']!r}")
    return table


def _report_record(report: SolveReport) -> dict:
    record = asdict(report)
    record.pop('residual_history')
    return record


def trajectory_manifest(traj: Trajectory, files, chain=None) -> dict:
    grid = traj.grid
    return {
        'scheme': traj.scheme,
        'step': traj.step,
        'grid': {'cells': list(grid.cells), 'spacing': list(grid.spacing), 'origin': list(grid.origin)},
        'times': list(traj.times),
        'snapshots': [{'index': i, 'time': traj.times[i], 'file': name, 'sha256': digest}
                      for i, name, digest in files],
        'chain': chain,
        'residual_budget': traj.residual_budget,
        'reports': [_report_record(i) for i in traj.reports],
        'metadata': traj.metadata,
    }


def _chain_frame(traj: Trajectory) -> pd.DataFrame:
    """Every state of the chain as one column, cells in C order"""
    frame = field_to_frame(traj.states[0])[[f"i{axis}" for axis in range(traj.grid.dim)]]
    columns = {CHAIN_COLUMN % m: [repr(float(i)) for i in u.values.ravel()] for m, u in enumerate(traj.states)}
    return pd.concat([frame, pd.DataFrame(columns)], axis=1)


def _read_chain(file_path, grid: Grid, count: int):
    frame = pd.read_csv(file_path, float_precision='round_trip')
    if len(frame) != grid.size:
        raise GridError(f"{file_path} has {len(frame)} rows for {grid.size} cells")
    index = tuple(frame[f"i{axis}"].to_numpy() for axis in range(grid.dim))
    states = list()
    for m in range(count):
        values = np.empty(grid.shape)
        values[index] = frame[CHAIN_COLUMN % m].to_numpy(dtype=float)
        states.append(GridField(grid, values))
    return states


def write_trajectory(traj: Trajectory, directory, every: int = 1, threads: int = 1) -> dict:
    """One field CSV per kept snapshot plus manifest.json; the first and last states are always kept.

    When snapshots are thinned out the whole chain also goes to chain.csv, so the directory can still be
    audited step by step.
    """
    if every < 1:
        raise ValueError(f"Snapshot cadence must be at least 1, got {every}")
    os.makedirs(directory, exist_ok=True)
    keep = sorted(set(range(0, len(traj.states), every)) | {len(traj.states) - 1})

    def write(i):
        name = 'state_%05d.csv' % i
        file_path = path.join(directory, name)
        write_field_csv(traj.states[i], file_path)
        return i, name, file_sha256(file_path)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            files = list(executor.map(write, keep))
    else:
        files = [write(i) for i in keep]
    chain = None
    if len(keep) < len(traj.states):
        chain_path = path.join(directory, CHAIN_NAME)
        atomic_write(chain_path, _chain_frame(traj).to_csv(index=False, lineterminator='\n'))
        chain = {'file': CHAIN_NAME, 'sha256': file_sha256(chain_path)}
    manifest = trajectory_manifest(traj, files, chain)
    atomic_write(path.join(directory, MANIFEST_NAME), json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    return manifest


def read_trajectory(directory) -> Trajectory:
    """Trajectory from a manifest directory, every step of the chain included.

    Thinned snapshots are read back from chain.csv; a directory whose snapshots skip steps without a chain
    cannot stand for the scheme's trajectory and is refused.
    """
    manifest_loc = path.join(directory, MANIFEST_NAME)
    if not path.isfile(manifest_loc):
        raise ValueError(f"No {MANIFEST_NAME} in {directory}")
    with open(manifest_loc) as f:
        manifest = json.load(f)
    snapshots = manifest['snapshots']
    times = manifest.get('times', [i['time'] for i in snapshots])
    if manifest.get('chain'):
        grid = read_field_csv(path.join(directory, snapshots[0]['file'])).grid
        states = _read_chain(path.join(directory, manifest['chain']['file']), grid, len(times))
    elif [i['index'] for i in snapshots] == list(range(len(times))):
        states = [read_field_csv(path.join(directory, i['file'])) for i in snapshots]
    else:
        raise ValueError(f"Snapshots in {directory} skip steps of the chain and no {CHAIN_NAME} was written")
    reports = [SolveReport(residual_history=[], **i) for i in manifest.get('reports', [])]
    if len(reports) not in (0, len(times) - 1):
        raise ValueError(f"{MANIFEST_NAME} in {directory} lists {len(reports)} solves for {len(times) - 1} steps")
    return Trajectory(times, states, manifest['scheme'], manifest['step'], reports, manifest.get('metadata', {}))
