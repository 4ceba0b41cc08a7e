"""
Executable checks of the solution theory: the discrete Kruzkov entropy residual and its audit over a family of
space-time bump test functions, and the trajectory property suite (Lp bounds, maximum principle, order
preservation, L1 equicontinuity, conservation of mass).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
import logging

import numpy as np
import pandas as pd

from nonloclaw.grid_core import (Grid, coordinates, periodic_distance, norm, mass, positive_part,
                                 lattice_shifts, translation_modulus)
from nonloclaw.nonlocal_operator import OperatorAssembly
from nonloclaw.resolvent import ResolventOptions
from nonloclaw.semigroup import Trajectory, EXPLICIT, IMPLICIT, evolve_implicit, initial_condition, step_times
from nonloclaw.utils import atomic_write, sign0, stable_sum

LOGGER = logging.getLogger("nonloclaw.verify")

TENSOR_BUMP = 'tensor_bump'
SUPPORT_FILL = 0.9
ENTROPY_RELATIVE_TOL = 1e-8
ENTROPY_TOL_FLOOR = 1e-12
REPORT_COLUMNS = ['case', 'property', 'time', 'lhs', 'rhs', 'margin', 'passed']


def _bump(s):
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1, (1 - s ** 2) ** 3, 0.0)


@dataclass
class TestFunctionFamily:
    """Tensor-product bumps (1 - s^2)^3 in time and in the periodic distance along each axis.

    `centers` are (t, x0[, x1]) points and `widths` the (time, space...) half-widths of the supports.
    """
    centers: list
    widths: tuple
    kind: str = TENSOR_BUMP

    __test__ = False

    def __len__(self):
        return len(self.centers)

    def validate(self, T: float, grid: Grid):
        if self.kind != TENSOR_BUMP:
            raise ValueError(f"Unknown test function kind '{self.kind}'")
        widths = np.asarray(self.widths, dtype=float)
        if len(widths) != grid.dim + 1 or np.any(widths <= 0):
            raise ValueError(f"Test functions need {grid.dim + 1} positive widths, got {self.widths}")
        for axis, width in enumerate(widths[1:]):
            if width >= grid.extent[axis] / 2:
                raise ValueError(f"Spatial width {width!r} does not fit half the period {grid.extent[axis]!r}")
        for center in self.centers:
            if not (center[0] - widths[0] > 0 and center[0] + widths[0] < T):
                raise ValueError(f"Test function centred at t={center[0]!r} is not supported inside (0, {T!r})")
        return self

    def values(self, i: int, times, grid: Grid) -> np.ndarray:
        """Member i sampled on the (times, grid) lattice, shape (len(times),) + grid.shape"""
        center, widths = self.centers[i], self.widths
        in_time = _bump((np.asarray(times, dtype=float) - center[0]) / widths[0])
        in_space = np.ones(grid.shape)
        for axis, x in enumerate(coordinates(grid)):
            in_space = in_space * _bump(periodic_distance(x, center[axis + 1], grid.extent[axis]) / widths[axis + 1])
        return in_time.reshape((-1,) + (1,) * grid.dim) * in_space[None, ...]


def bump_family(grid: Grid, T: float, n_space: int = 5, n_time: int = 5) -> TestFunctionFamily:
    """n_time x n_space^dim bumps on a regular space-time lattice, supports strictly inside (0, T)"""
    if n_space < 1 or n_time < 1:
        raise ValueError("A test function family needs at least one centre per direction")
    time_centers = [T * (k + 1) / (n_time + 1) for k in range(n_time)]
    axes = [[o + e * (k + 0.5) / n_space for k in range(n_space)] for o, e in zip(grid.origin, grid.extent)]
    widths = (SUPPORT_FILL * T / (n_time + 1),) + \
        tuple(min(SUPPORT_FILL * e / n_space, SUPPORT_FILL * e / 2) for e in grid.extent)
    centers = [(t,) + x for t, x in product(time_centers, product(*axes))]
    return TestFunctionFamily(centers, widths).validate(T, grid)


def _roll_space(values, offsets):
    return np.roll(values, tuple(-int(i) for i in offsets), axis=tuple(range(1, values.ndim)))


def _entropy_terms(traj: Trajectory, op: OperatorAssembly, f: np.ndarray, c: float):
    states = np.stack([i.values for i in traj.states])
    terms = [np.abs(states[:-1] - c) * (f[1:] - f[:-1])]
    # explicit steps pair f^{m+1} with u^m, implicit ones f^m with u^m
    u = states[:-1] if traj.scheme == EXPLICIT else states[1:]
    weight = f[1:]
    dt = traj.time_steps.reshape((-1,) + (1,) * traj.grid.dim)
    sign_u = sign0(u - c)
    for flux, shifts, coefficients in op.terms():
        at_c = flux.phi(c, c)
        for offsets, coefficient in zip(shifts, coefficients):
            shifted_u, shifted_f = _roll_space(u, offsets), _roll_space(weight, offsets)
            terms.append(dt * coefficient * (shifted_f * sign0(shifted_u - c) - weight * sign_u) *
                         (flux.phi(u, shifted_u) - at_c))
    return terms


def entropy_residual(traj: Trajectory, op: OperatorAssembly, f, c: float) -> float:
    """Discrete entropy functional

    E(f, c) = sum_m sum_x dx^n [ |u^m - c| (f^{m+1} - f^m)
              + dt sum_ij c_ij (tau f sign0(tau u - c) - f sign0(u - c)) (phi_i(u, tau u) - phi_i(c, c)) ]

    which is >= 0 for entropy solutions. `f` is an array sampled at the trajectory's times and cells.
    """
    if traj.grid != op.grid:
        raise ValueError("Trajectory and operator live on different grids")
    f = np.asarray(f, dtype=float)
    expected = (len(traj.times),) + traj.grid.shape
    if f.shape != expected:
        raise ValueError(f"Test function has shape {f.shape}, expected {expected}")
    if np.any(f < 0):
        raise ValueError("Test functions must be nonnegative")
    terms = _entropy_terms(traj, op, f, float(c))
    return traj.grid.cell_volume * stable_sum(np.concatenate([i.ravel() for i in terms]))


def c_values(traj: Trajectory, c_samples: int) -> np.ndarray:
    """Quantiles of the trajectory's values plus the two sentinels -(|u|_inf + 1) and |u|_inf + 1"""
    values = np.concatenate([i.values.ravel() for i in traj.states])
    sup = float(np.max(np.abs(values)))
    levels = np.linspace(0.0, 1.0, c_samples) if c_samples > 1 else np.array([0.5])
    return np.concatenate([[-(sup + 1)], np.quantile(values, levels), [sup + 1]])


@dataclass
class EntropyReport:
    residuals: pd.DataFrame
    min_residual: float
    tol: float
    passed: bool
    offending: dict = field(default=None)

    def summary(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        line = f"entropy audit {status}: {len(self.residuals)} residuals, minimum {self.min_residual!r} " \
               f"(tolerance {self.tol!r})"
        if self.offending is not None:
            line += f", worst at c={self.offending['c']!r} centre t={self.offending['t_center']!r}"
        return line


def entropy_audit(traj: Trajectory, op: OperatorAssembly, family: TestFunctionFamily, c_samples: int = 7,
                  tol: float = None, threads: int = 1, logger=LOGGER) -> EntropyReport:
    """Evaluate the entropy residual over family x c-values; passes iff min residual >= -tol.

    The default tolerance is 1e-8 |u0|_1 T (floored at 1e-12) plus the residuals the
    implicit solves left behind, which the sentinel levels see through the weak form.
    """
    family.validate(traj.final_time, traj.grid)
    if tol is None:
        tol = max(ENTROPY_RELATIVE_TOL * norm(traj.states[0], 1) * traj.final_time, ENTROPY_TOL_FLOOR) \
            + traj.residual_budget
    cs = c_values(traj, c_samples)
    samples = [family.values(i, traj.times, traj.grid) for i in range(len(family))]
    pairs = list(product(range(len(family)), range(len(cs))))

    def evaluate(pair):
        i, j = pair
        return entropy_residual(traj, op, samples[i], cs[j])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            residuals = list(executor.map(evaluate, pairs))
    else:
        residuals = [evaluate(i) for i in pairs]
    space_names = [f"x{axis}_center" for axis in range(traj.grid.dim)]
    rows = list()
    for (i, j), residual in zip(pairs, residuals):
        center = family.centers[i]
        row = {'member': i, 't_center': center[0]}
        row.update({name: value for name, value in zip(space_names, center[1:])})
        row.update({'width_time': family.widths[0], 'width_space': family.widths[1], 'c': float(cs[j]),
                    'residual': residual})
        rows.append(row)
    frame = pd.DataFrame(rows, columns=['member', 't_center'] + space_names +
                         ['width_time', 'width_space', 'c', 'residual'])
    worst = int(frame['residual'].idxmin())
    min_residual = float(frame.loc[worst, 'residual'])
    passed = min_residual >= -tol
    offending = None if passed else frame.loc[worst].to_dict()
    report = EntropyReport(frame, min_residual, tol, passed, offending)
    logger.info(report.summary())
    return report


def write_entropy_report(report: EntropyReport, file_path):
    text = report.residuals.to_csv(index=False, lineterminator='\n', float_format=repr)
    atomic_write(file_path, text + '# ' + report.summary() + '\n')


def expansion_shock_trajectory(grid: Grid, T: float, steps: int, u_left: float = -1.0, u_right: float = 1.0,
                               x0: float = None) -> Trajectory:
    """Time-independent Riemann data with u_left < u_right: for convex fluxes an entropy-violating
    stationary expansion shock at x0 (the opposite jump at the seam is an admissible shock)"""
    x0 = grid.origin[0] + grid.extent[0] / 2 if x0 is None else x0
    u0 = initial_condition(grid, 'riemann', u_left=u_left, u_right=u_right, x0=x0)
    times = step_times(T, T / steps)
    return Trajectory(times, [u0] * len(times), IMPLICIT, T / steps, metadata={'control': 'expansion_shock'})


def _worst_over_time(case, name, times, lhs, rhs, tol):
    """One report row per property: the time with the smallest margin"""
    margins = np.asarray(rhs) - np.asarray(lhs)
    k = int(np.argmin(margins))
    return {'case': case, 'property': name, 'time': float(times[k]), 'lhs': float(lhs[k]), 'rhs': float(rhs[k]),
            'margin': float(margins[k]), 'passed': bool(margins[k] >= -tol)}


def _modulus_margins(u_traj, shifts):
    """min over lattice shifts y of modulus(u0, y) - modulus(u(t), y), per snapshot"""
    worst = None
    for y in shifts:
        initial = translation_modulus(u_traj.states[0], y)
        current = np.array([translation_modulus(i, y) for i in u_traj.states])
        margin = initial - current
        worst = margin if worst is None else np.minimum(worst, margin)
    return worst


def trajectory_properties(case, u_traj: Trajectory, v_traj: Trajectory, tol: float = 1e-8,
                          shift_radius: int = None) -> list:
    """Report rows for the Lp, maximum principle, order, equicontinuity and mass properties of a pair"""
    u0, v0, times = u_traj.states[0], v_traj.states[0], u_traj.times
    budget = tol + u_traj.residual_budget + v_traj.residual_budget
    rows = list()
    l1, sup = norm(u0, 1), norm(u0, np.inf)
    for p in (1, 2, np.inf):
        bound = sup if np.isinf(p) else l1 ** (1 / p) * sup ** (1 - 1 / p)
        rows.append(_worst_over_time(case, f"lp_bound_p{p}", times, [norm(i, p) for i in u_traj.states],
                                     [bound] * len(times), budget))
    lower = -float(np.max(np.maximum(-u0.values, 0.0)))
    upper = float(np.max(np.maximum(u0.values, 0.0)))
    rows.append(_worst_over_time(case, 'max_principle_lower', times, [lower] * len(times),
                                 [float(np.min(i.values)) for i in u_traj.states], budget))
    rows.append(_worst_over_time(case, 'max_principle_upper', times, [float(np.max(i.values)) for i in u_traj.states],
                                 [upper] * len(times), budget))
    rows.append(_worst_over_time(case, 'order_positive_part', times,
                                 [norm(positive_part(u - v), 1) for u, v in zip(u_traj.states, v_traj.states)],
                                 [norm(positive_part(u0 - v0), 1)] * len(times), budget))
    rows.append(_worst_over_time(case, 'order_negative_part', times,
                                 [norm(positive_part(v - u), 1) for u, v in zip(u_traj.states, v_traj.states)],
                                 [norm(positive_part(v0 - u0), 1)] * len(times), budget))
    rows.append(_worst_over_time(case, 'l1_contraction', times,
                                 [norm(u - v, 1) for u, v in zip(u_traj.states, v_traj.states)],
                                 [norm(u0 - v0, 1)] * len(times), budget))
    margins = _modulus_margins(u_traj, lattice_shifts(u0.grid, shift_radius))
    rows.append(_worst_over_time(case, 'equicontinuity', times, -margins, np.zeros(len(times)), budget))
    initial_mass = mass(u0)
    rows.append(_worst_over_time(case, 'mass', times, [abs(mass(i) - initial_mass) for i in u_traj.states],
                                 [0.0] * len(times), budget))
    return rows


def theorem_suite(op: OperatorAssembly, cases, opts: ResolventOptions = None, tol: float = 1e-8,
                  shift_radius: int = None, logger=LOGGER) -> pd.DataFrame:
    """Evolve each case's (u0, v0) pair implicitly and check the trajectory properties at every step.

    Cases are dicts with keys u0, v0, T and eps. Tolerances are tol plus both trajectories' solver residuals.
    """
    rows = list()
    for case, spec in enumerate(cases):
        u_traj = evolve_implicit(op, spec['u0'], spec['T'], spec['eps'], opts, logger)
        v_traj = evolve_implicit(op, spec['v0'], spec['T'], spec['eps'], opts, logger)
        rows += trajectory_properties(case, u_traj, v_traj, tol, shift_radius)
    return _property_report(rows, logger)


def trajectory_pair_report(u_traj: Trajectory, v_traj: Trajectory, tol: float = 1e-8, shift_radius: int = None,
                           logger=LOGGER) -> pd.DataFrame:
    """The theorem_suite checks on a pair of implicit trajectories that were already evolved"""
    return _property_report(trajectory_properties(0, u_traj, v_traj, tol, shift_radius), logger)


def _property_report(rows, logger) -> pd.DataFrame:
    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    passed, failures = check_report(report)
    if not passed:
        for _, row in failures.iterrows():
            logger.warning(f"Case {row['case']}: {row['property']} fails with margin {row['margin']!r} "
                           f"at t={row['time']!r}")
    return report


def check_report(report: pd.DataFrame):
    """(all passed, failing rows) for any report with a boolean 'passed' column"""
    failures = report.loc[~report['passed'].astype(bool)]
    return len(failures) == 0, failures
