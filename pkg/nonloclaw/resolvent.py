"""
Stationary solves of u + lam B_h u = g (the resolvent of the nonlocal operator) and of its viscous
regularisation u + lam B_h u - eps Lap_h u = g.

Two methods are available: a Picard fixed point when lam * L_h is small, and a nonlinear Gauss-Seidel sweep
that solves each cell's scalar equation by safeguarded Newton/bisection. The scalar equations are strictly
increasing with slope >= 1 because every flux is nondecreasing in its first and nonincreasing in its second
argument and all stencil weights are nonnegative.

With viscosity the Gauss-Seidel range is handled by Newton steps on the sparse Jacobian with a linearly implicit
splitting step as fallback, so the iteration count does not grow with eps / dx^2.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse import identity
from scipy.sparse.linalg import factorized, spsolve

from nonloclaw.grid_core import (GridField, ShiftVector, shift, shift_values, norm, mass, positive_part,
                                 laplacian_matrix)
from nonloclaw.nonlocal_operator import OperatorAssembly, apply_values, warn_if_out_of_range
from nonloclaw.utils import SolverDivergenceError, NonFiniteError, stable_sum

LOGGER = logging.getLogger("nonloclaw.resolvent")

PICARD = 'picard'
GAUSS_SEIDEL = 'gauss_seidel'
AUTO = 'auto'
METHODS = (PICARD, GAUSS_SEIDEL, AUTO)
# reported for viscous solves that go past the Picard range
VISCOUS_NEWTON = 'newton_splitting'
NEWTON_DECREASE = 0.9
PICARD_THRESHOLD = 0.5
DEFAULT_RELATIVE_TOL = 1e-10
SCALAR_MAX_ITERS = 60
SCALAR_RTOL = 1e-15


@dataclass
class ResolventOptions:
    tol_residual: float = None
    max_iters: int = 1000
    method: str = AUTO
    viscosity: float = 0.0

    def __post_init__(self):
        if self.tol_residual is not None and not self.tol_residual > 0:
            raise ValueError(f"tol_residual must be positive, got {self.tol_residual}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.method not in METHODS:
            raise ValueError(f"Unknown solver method '{self.method}', choose one of {', '.join(METHODS)}")
        if not self.viscosity >= 0:
            raise ValueError(f"viscosity must be nonnegative, got {self.viscosity}")
        self.max_iters = int(self.max_iters)

    def tolerance_for(self, g: GridField) -> float:
        if self.tol_residual is not None:
            return self.tol_residual
        return DEFAULT_RELATIVE_TOL * (1.0 + norm(g, 1))


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    method_used: str
    contraction_estimate: float
    tol_residual: float
    residual_history: list = field(default_factory=list)


def choose_method(op: OperatorAssembly, lam: float, method: str = AUTO) -> str:
    if method != AUTO:
        return method
    return PICARD if lam * op.lipschitz_bound <= PICARD_THRESHOLD else GAUSS_SEIDEL


def _colour_period(reach: int, cells: int) -> int:
    """Smallest period > reach dividing the axis, so same-coloured cells never share a stencil"""
    period = reach + 1
    while cells % period:
        period += 1
    return period


class _ColouredSweep:
    """Nonlinear Gauss-Seidel in multicolour order.

    Cells whose index agrees modulo the colour period on every axis are farther apart than any stencil
    reaches, so the scalar equations of one colour are independent and are solved together.
    """

    def __init__(self, op: OperatorAssembly, lam: float):
        grid = op.grid
        index = np.arange(grid.size).reshape(grid.shape)
        self.terms = list()
        reach = np.zeros(grid.dim, dtype=int)
        for flux, shifts, coefficients in op.terms():
            plus = np.stack([shift_values(index, s).ravel() for s in shifts], axis=1)
            minus = np.stack([shift_values(index, -s).ravel() for s in shifts], axis=1)
            self.terms.append((flux, plus, minus, lam * coefficients))
            reach = np.maximum(reach, np.max(np.abs(shifts), axis=0))
        periods = [_colour_period(int(r), n) for r, n in zip(reach, grid.cells)]
        colour = np.zeros(grid.shape, dtype=int)
        for period, position in zip(periods, np.indices(grid.shape)):
            colour = colour * period + position % period
        colour = colour.ravel()
        self.colours = [np.flatnonzero(colour == c) for c in np.unique(colour)]

    def equations(self, u: np.ndarray, g: np.ndarray, cells: np.ndarray):
        """F(v) and F'(v) for the given cells with every other cell frozen at u"""
        frozen = [(flux, u[plus[cells]], u[minus[cells]], weights) for flux, plus, minus, weights in self.terms]
        rhs = g[cells]

        def scalar(v):
            column = v[:, None]
            value = v - rhs
            slope = np.ones(v.shape)
            for flux, up, down, weights in frozen:
                value = value + (flux.phi(column, up) - flux.phi(down, column)) @ weights
                slope = slope + (flux.dphi_da(column, up) - flux.dphi_db(down, column)) @ weights
            return value, slope

        return scalar

    def sweep(self, u: np.ndarray, g: np.ndarray):
        for cells in self.colours:
            u[cells] = _solve_scalar(self.equations(u, g, cells), u[cells], 1.0 + np.abs(g[cells]))


class _ViscousNewton:
    """u + lam B_h u - eps Lap_h u = g by Newton steps on the sparse Jacobian.

    A Newton step is kept only when it cuts the L1 residual; otherwise the step is the linearly implicit
    splitting ((1 + mu) I - eps Lap_h) u' = g + mu u - lam B_h u with mu = lam * cfl_constant. That map is
    order preserving and contracts L1 by mu / (1 + mu), whatever eps / dx^2 is.
    """

    def __init__(self, op: OperatorAssembly, lam: float, eps: float, lap):
        grid = op.grid
        self.op, self.lam, self.eps, self.lap = op, lam, eps, lap
        self.mu = lam * op.cfl_constant
        index = np.arange(grid.size).reshape(grid.shape)
        self.links = list()
        for flux, shifts, coefficients in op.terms():
            for s, c in zip(shifts, coefficients):
                self.links.append((flux, shift_values(index, s).ravel(), shift_values(index, -s).ravel(), lam * c))
        self.linear = (identity(grid.size, format='csc') - eps * lap).tocsc()
        self.split_solve = factorized((self.linear + self.mu * identity(grid.size, format='csc')).tocsc())

    def jacobian(self, u: np.ndarray):
        """d/du of u + lam B_h u - eps Lap_h u"""
        cells = np.arange(u.size)
        rows, cols, values = list(), list(), list()
        for flux, plus, minus, weight in self.links:
            out_a, out_b = flux.dphi_da(u, u[plus]), flux.dphi_db(u, u[plus])
            in_a, in_b = flux.dphi_da(u[minus], u), flux.dphi_db(u[minus], u)
            rows += [cells, cells, cells]
            cols += [cells, plus, minus]
            values += [weight * (out_a - in_b), weight * out_b, -weight * in_a]
        size = u.size
        nonlocal_part = sparse.coo_matrix((np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
                                          shape=(size, size))
        return (self.linear + nonlocal_part.tocsc()).tocsc()

    def step(self, u: np.ndarray, g: np.ndarray, residual_field: np.ndarray, residual: float):
        flat = u.ravel()
        candidate = flat - spsolve(self.jacobian(flat), residual_field.ravel())
        if np.all(np.isfinite(candidate)):
            candidate = candidate.reshape(u.shape)
            trial = _l1(self.op, _residual_values(self.op, candidate, g, self.lam, self.eps, self.lap))
            if trial <= NEWTON_DECREASE * residual:
                return candidate
        rhs = g + self.mu * u - self.lam * apply_values(self.op, u)
        return self.split_solve(rhs.ravel()).reshape(u.shape)


def _solve_scalar(scalar, v0: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Safeguarded Newton per cell; F has slope >= 1 so [v0 - F(v0), v0] or [v0, v0 - F(v0)] brackets"""
    f0, d0 = scalar(v0)
    lo = np.where(f0 > 0, v0 - f0, v0)
    hi = np.where(f0 > 0, v0, v0 - f0)
    v = v0 - f0 / np.maximum(d0, 1.0)
    tol = SCALAR_RTOL * scale
    for _ in range(SCALAR_MAX_ITERS):
        f, d = scalar(v)
        hi = np.where(f > 0, v, hi)
        lo = np.where(f < 0, v, lo)
        done = (np.abs(f) <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(v)))
        if np.all(done):
            break
        newton = v - f / np.maximum(d, 1.0)
        inside = (lo < newton) & (newton < hi)
        v = np.where(done, v, np.where(inside, newton, 0.5 * (lo + hi)))
    return v


def _residual_values(op, u, g, lam, eps, lap):
    out = u + lam * apply_values(op, u) - g
    if eps > 0:
        out = out - eps * (lap @ u.ravel()).reshape(u.shape)
    return out


def _l1(op, values) -> float:
    return op.grid.cell_volume * stable_sum(np.abs(values))


def _contraction(history) -> float:
    ratios = [b / a for a, b in zip(history[:-1], history[1:]) if a > 0]
    return float(max(ratios[-5:])) if ratios else 0.0


def _iterate(op, g, lam, eps, opts, initial, callback, logger):
    tol = opts.tolerance_for(g)
    method = choose_method(op, lam, opts.method)
    if method == PICARD and lam * op.lipschitz_bound > 1 and eps == 0:
        logger.warning(f"Picard iteration requested with lam * L_h = {lam * op.lipschitz_bound!r} > 1; "
                       f"it may not converge")
    g_values = np.array(g.values, dtype=float)
    u = np.array(g_values if initial is None else initial.values, dtype=float)
    warn_if_out_of_range(op, g_values, logger)
    lap = laplacian_matrix(op.grid) if eps > 0 else None
    linear_solve = None
    if eps > 0 and method == PICARD:
        linear_solve = factorized((identity(op.grid.size, format='csc') - eps * lap).tocsc())
    sweeper = None
    if method == GAUSS_SEIDEL and eps > 0:
        method = VISCOUS_NEWTON
        sweeper = _ViscousNewton(op, lam, eps, lap)
    elif method == GAUSS_SEIDEL:
        sweeper = _ColouredSweep(op, lam)
    history = list()
    for iteration in range(1, opts.max_iters + 1):
        residual_field = _residual_values(op, u, g_values, lam, eps, lap)
        residual = _l1(op, residual_field)
        history.append(residual)
        if not np.isfinite(residual):
            raise SolverDivergenceError(f"{method} produced a non-finite residual at iteration {iteration}",
                                        history)
        if residual <= tol:
            report = SolveReport(iteration, residual, method, _contraction(history), tol, history)
            return GridField(op.grid, u), report
        if method == PICARD:
            rhs = g_values - lam * apply_values(op, u)
            if linear_solve is None:
                u = rhs
            else:
                u = linear_solve(rhs.ravel()).reshape(op.grid.shape)
                linear_residual = _l1(op, u - eps * (lap @ u.ravel()).reshape(u.shape) - rhs)
                if linear_residual > tol / 10:
                    logger.warning(f"Linear viscous solve residual {linear_residual!r} exceeds {tol / 10!r}")
        elif method == VISCOUS_NEWTON:
            u = sweeper.step(u, g_values, residual_field, residual)
        else:
            flat = u.ravel().copy()
            sweeper.sweep(flat, g_values.ravel())
            u = flat.reshape(op.grid.shape)
        if callback is not None:
            callback(iteration, GridField(op.grid, u))
    logger.critical(f"{method} did not reach residual {tol!r} in {opts.max_iters} iterations, "
                    f"last residual {history[-1]!r}")
    raise SolverDivergenceError(f"{method} did not converge in {opts.max_iters} iterations "
                                f"(last residual {history[-1]!r}, target {tol!r})", history)


def _check_inputs(op, g, lam):
    if g.grid != op.grid:
        raise ValueError("Right-hand side and operator live on different grids")
    if not np.all(np.isfinite(g.values)):
        raise NonFiniteError("Right-hand side is not finite")
    if not (np.isfinite(lam) and lam >= 0):
        raise ValueError(f"lambda must be positive, got {lam}")


def solve_resolvent(op: OperatorAssembly, g: GridField, lam: float, opts: ResolventOptions = None,
                    initial: GridField = None, callback=None, logger=LOGGER):
    """u = (I + lam B_h)^-1 g with |u + lam B_h u - g|_1 <= tol_residual"""
    opts = ResolventOptions() if opts is None else opts
    _check_inputs(op, g, lam)
    if lam == 0:
        raise ValueError("lambda must be positive, got 0")
    if opts.viscosity > 0:
        return solve_regularized(op, g, lam, opts.viscosity, opts, initial, callback, logger)
    return _iterate(op, g, lam, 0.0, opts, initial, callback, logger)


def solve_regularized(op: OperatorAssembly, g: GridField, lam: float, eps: float, opts: ResolventOptions = None,
                      initial: GridField = None, callback=None, logger=LOGGER):
    """u + lam B_h u - eps Lap_h u = g through u <- (I - eps Lap_h)^-1 (g - lam B_h u) or Newton with splitting"""
    opts = ResolventOptions() if opts is None else opts
    _check_inputs(op, g, lam)
    if not (np.isfinite(eps) and eps > 0):
        raise ValueError(f"The viscosity must be positive, got {eps}")
    return _iterate(op, g, lam, float(eps), opts, initial, callback, logger)


def _default_shift(grid):
    return ShiftVector([min(3, grid.cells[0] - 1)] + [1] * (grid.dim - 1))


def resolvent_property_suite(op: OperatorAssembly, cases, lam: float, opts: ResolventOptions = None,
                             shift_vector: ShiftVector = None, tol=1e-9, tol_interpolation=1e-8,
                             logger=LOGGER) -> pd.DataFrame:
    """Check the resolvent's Lp bounds, maximum principle, order preservation with L1 contraction,
    translation equivariance and mass conservation on each (g1, g2) pair.

    Returns one row per case and property with the two compared sides and the margin (rhs - lhs).
    """
    opts = ResolventOptions() if opts is None else opts
    s = _default_shift(op.grid) if shift_vector is None else shift_vector
    rows = list()

    def record(case, name, lhs, rhs, tolerance):
        rows.append({'case': case, 'property': name, 'lhs': lhs, 'rhs': rhs, 'margin': rhs - lhs,
                     'passed': bool(lhs <= rhs + tolerance)})

    for case, (g1, g2) in enumerate(cases):
        u1, r1 = solve_resolvent(op, g1, lam, opts, logger=logger)
        u2, r2 = solve_resolvent(op, g2, lam, opts, logger=logger)
        # L1 comparisons hold up to the residuals the solves left behind
        pair_tol = tol + r1.final_residual + r2.final_residual
        g1_l1, g1_inf = norm(g1, 1), norm(g1, np.inf)
        for p in (1, 2, np.inf):
            bound = g1_inf if np.isinf(p) else g1_l1 ** (1 / p) * g1_inf ** (1 - 1 / p)
            record(case, f"lp_bound_p{p}", norm(u1, p), bound,
                   tol + r1.final_residual if p == 1 else tol_interpolation)
        lower = -float(np.max(np.maximum(-g1.values, 0.0)))
        upper = float(np.max(np.maximum(g1.values, 0.0)))
        record(case, 'max_principle_lower', lower, float(np.min(u1.values)), tol)
        record(case, 'max_principle_upper', float(np.max(u1.values)), upper, tol)
        record(case, 'order_positive_part', norm(positive_part(u1 - u2), 1), norm(positive_part(g1 - g2), 1),
               pair_tol)
        record(case, 'order_negative_part', norm(positive_part(u2 - u1), 1), norm(positive_part(g2 - g1), 1),
               pair_tol)
        record(case, 'l1_contraction', norm(u1 - u2, 1), norm(g1 - g2, 1), pair_tol)
        shifted, rs = solve_resolvent(op, shift(g1, s), lam, opts, logger=logger)
        record(case, 'translation', norm(shifted - shift(u1, s), 1), 0.0,
               tol + r1.final_residual + rs.final_residual)
        record(case, 'mass', abs(mass(u1) - mass(g1)), 0.0, tol + r1.final_residual)
    report = pd.DataFrame(rows, columns=['case', 'property', 'lhs', 'rhs', 'margin', 'passed'])
    failed = report.loc[~report['passed']]
    if len(failed) > 0:
        logger.warning(f"{len(failed)} resolvent property checks failed: "
                       f"{', '.join(sorted(set(failed['property'])))}")
    return report
