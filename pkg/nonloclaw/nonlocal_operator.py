"""
The discrete nonlocal divergence B_h assembled from quadrature stencils and pair fluxes, its L1 Lipschitz
bound and the explicit monotone time step.
"""
import logging

import numpy as np

from nonloclaw.grid_core import Grid, GridField, ShiftVector, shift_values, diff_quotient, norm, inner
from nonloclaw.kernels import KernelSpec, Stencil, build_stencils, harmonic_mass
from nonloclaw.fluxes import FluxPair, in_range
from nonloclaw.utils import CFLError, NonFiniteError, GridError, stable_sum

LOGGER = logging.getLogger("nonloclaw.nonlocal_operator")

CFL_SLACK = 1e-12


class OperatorAssembly:
    """Stencils and fluxes of the k subinteractions on one grid"""

    def __init__(self, grid: Grid, stencils, fluxes):
        stencils, fluxes = list(stencils), list(fluxes)
        if len(stencils) != len(fluxes):
            raise ValueError(f"{len(stencils)} stencils were given with {len(fluxes)} fluxes")
        if len(stencils) == 0:
            raise ValueError("An operator needs at least one subinteraction")
        for stencil in stencils:
            if stencil.shifts.shape[1] != grid.dim or \
                    np.any(np.abs(stencil.shifts) >= np.asarray(grid.cells)):
                raise GridError(f"Stencil {stencil.index} was not built for this {grid.cells} grid")
        self.grid = grid
        self.stencils = tuple(stencils)
        self.fluxes = tuple(fluxes)
        self.harmonic_masses = tuple(harmonic_mass(i) for i in stencils)
        self.lipschitz_bound = stable_sum([2.0 * f.lipschitz * h for f, h in zip(fluxes, self.harmonic_masses)])
        self.cfl_constant = stable_sum([f.lipschitz * h for f, h in zip(fluxes, self.harmonic_masses)])
        if not np.isfinite(self.lipschitz_bound):
            raise ValueError("The operator's Lipschitz bound is not finite")

    @property
    def k(self) -> int:
        return len(self.stencils)

    def terms(self):
        """(flux, shifts, coefficients) per subinteraction, in summation order"""
        return [(f, s.shifts, s.coefficients) for f, s in zip(self.fluxes, self.stencils)]


def assemble(spec: KernelSpec, fluxes, grid: Grid) -> OperatorAssembly:
    """One flux for every subinteraction, or a list matching the partition"""
    if isinstance(fluxes, FluxPair):
        fluxes = [fluxes] * spec.k
    return OperatorAssembly(grid, build_stencils(spec, grid), fluxes)


def warn_if_out_of_range(op: OperatorAssembly, values, logger=LOGGER):
    for flux in op.fluxes:
        if not in_range(flux, values):
            logger.warning(f"Field range [{float(np.min(values))!r}, {float(np.max(values))!r}] leaves the "
                           f"certified range {flux.range} of flux {flux.name}")
            return True
    return False


def apply_values(op: OperatorAssembly, values: np.ndarray) -> np.ndarray:
    """Array form of apply_B without checks, for solver inner loops"""
    out = np.zeros(op.grid.shape)
    for flux, shifts, coefficients in op.terms():
        for offsets, c in zip(shifts, coefficients):
            pair_flux = flux.phi(values, shift_values(values, offsets))
            # phi(tau_{-s}u, u) is phi(u, tau_s u) shifted back, so each term is an exact telescoping pair
            out += c * (pair_flux - shift_values(pair_flux, -offsets))
    return out


def apply_B(op: OperatorAssembly, u: GridField, logger=LOGGER) -> GridField:
    if u.grid != op.grid:
        raise GridError("Field and operator live on different grids")
    warn_if_out_of_range(op, u.values, logger)
    out = apply_values(op, u.values)
    if not np.all(np.isfinite(out)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(out))[0])
        raise NonFiniteError(f"B_h u is not finite at cell {bad}")
    return GridField(op.grid, out)


def lipschitz_bound(op: OperatorAssembly) -> float:
    """L_h with |B_h u - B_h v|_1 <= L_h |u - v|_1 on the certified range"""
    return op.lipschitz_bound


def cfl_constant(op: OperatorAssembly) -> float:
    return op.cfl_constant


def admissible_dt(op: OperatorAssembly) -> float:
    return np.inf if op.cfl_constant == 0 else 1.0 / op.cfl_constant


def check_cfl(op: OperatorAssembly, dt: float):
    if not dt > 0:
        raise ValueError(f"Time steps must be positive, got {dt}")
    if dt * op.cfl_constant > 1.0 + CFL_SLACK:
        raise CFLError(f"Explicit step {dt!r} violates the monotonicity condition dt * {op.cfl_constant!r} <= 1",
                       admissible_dt(op))


def explicit_step(op: OperatorAssembly, u: GridField, dt: float, logger=LOGGER) -> GridField:
    """Forward Euler u - dt B_h u; monotone and range preserving under the CFL condition"""
    check_cfl(op, dt)
    return u - dt * apply_B(op, u, logger).values


def weak_form_pairing(op: OperatorAssembly, u: GridField, f: GridField):
    """Both sides of sum f B_h u = -sum_ij c_ij (tau f - f) phi_i(u, tau u), cell-volume weighted"""
    lhs = inner(f, apply_B(op, u))
    terms = list()
    for flux, shifts, coefficients in op.terms():
        for offsets, c in zip(shifts, coefficients):
            pair_flux = flux.phi(u.values, shift_values(u.values, offsets))
            terms.append(c * (shift_values(f.values, offsets) - f.values) * pair_flux)
    rhs = -op.grid.cell_volume * stable_sum(np.stack(terms))
    return lhs, rhs


def difference_bound(op: OperatorAssembly, v: GridField):
    """(|B_h v|_1, 2 sum_i max(K_i1, K_i2) sum_j w_ij |D^{s_ij} v|_1), the first never exceeding the second"""
    bound = list()
    for flux, stencil in zip(op.fluxes, op.stencils):
        quotients = [w * norm(diff_quotient(v, ShiftVector(s)), 1) for s, w in zip(stencil.shifts, stencil.weights)]
        bound.append(2.0 * max(flux.K1, flux.K2) * stable_sum(quotients))
    return norm(apply_B(op, v), 1), stable_sum(bound)


def accretivity_margin(op: OperatorAssembly, u: GridField, v: GridField, lam: float) -> float:
    """|v - u + lam (B_h v - B_h u)|_1 - |v - u|_1, nonnegative for an accretive operator"""
    difference = v - u
    perturbed = difference + lam * (apply_B(op, v).values - apply_B(op, u).values)
    return norm(perturbed, 1) - norm(difference, 1)
