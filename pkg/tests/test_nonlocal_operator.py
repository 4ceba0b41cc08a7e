import pytest

import logging

import numpy as np

from nonloclaw.grid_core import Grid, GridField, norm, mass
from nonloclaw.kernels import EVEN_SYMMETRIC, ONE_SIDED, kernel_spec
from nonloclaw.fluxes import upwind_advection, engquist_osher_burgers, godunov_burgers
from nonloclaw.nonlocal_operator import assemble, apply_B, apply_values, lipschitz_bound, cfl_constant, \
    admissible_dt, check_cfl, explicit_step, weak_form_pairing, difference_bound, accretivity_margin
from nonloclaw.utils import CFLError, GridError


@pytest.fixture()
def upwind_op():
    grid = Grid(4, 1.0)
    return assemble(kernel_spec(ONE_SIDED, 1.0, 'constant'), upwind_advection(), grid)


@pytest.fixture()
def burgers_op():
    grid = Grid.from_extent(32, 1.0)
    return assemble(kernel_spec(EVEN_SYMMETRIC, 4 / 32, 'triangle'), engquist_osher_burgers(), grid)


@pytest.fixture()
def random_pairs(burgers_op):
    rng = np.random.default_rng(42)
    return [(GridField(burgers_op.grid, rng.uniform(-1, 1, 32)), GridField(burgers_op.grid, rng.uniform(-1, 1, 32)))
            for _ in range(100)]


def test_upwind_single_cell(upwind_op):
    u = GridField(upwind_op.grid, [0.0, 1.0, 0.0, 0.0])
    assert list(apply_B(upwind_op, u).values) == [0.0, 1.0, -1.0, 0.0]
    assert lipschitz_bound(upwind_op) == 2.0
    assert cfl_constant(upwind_op) == 1.0
    assert admissible_dt(upwind_op) == 1.0


def test_explicit_step_transports_exactly(upwind_op):
    u = GridField(upwind_op.grid, [0.0, 1.0, 0.0, 0.0])
    assert list(explicit_step(upwind_op, u, 1.0).values) == [0.0, 0.0, 1.0, 0.0]
    with pytest.raises(CFLError) as err:
        explicit_step(upwind_op, u, 1.5)
    assert err.value.admissible_dt == 1.0
    with pytest.raises(ValueError):
        check_cfl(upwind_op, 0.0)


def test_weak_form_identity(burgers_op, random_pairs):
    for u, f in random_pairs:
        lhs, rhs = weak_form_pairing(burgers_op, u, f)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_mass_neutral(burgers_op, random_pairs):
    for u, _ in random_pairs:
        assert mass(apply_B(burgers_op, u)) == pytest.approx(0.0, abs=1e-12)


def test_lipschitz_bound_holds(burgers_op, random_pairs):
    for u, v in random_pairs:
        lhs = norm(apply_B(burgers_op, u) - apply_B(burgers_op, v).values, 1)
        assert lhs <= lipschitz_bound(burgers_op) * norm(u - v.values, 1) + 1e-12


def test_difference_bound(burgers_op, random_pairs):
    for u, _ in random_pairs:
        lhs, rhs = difference_bound(burgers_op, u)
        assert lhs <= rhs + 1e-12


def test_accretive(burgers_op, random_pairs):
    for lam in (0.01, 0.1, 1.0):
        for u, v in random_pairs:
            assert accretivity_margin(burgers_op, u, v, lam) >= -1e-12


def test_constant_fields_are_stationary(burgers_op):
    u = GridField(burgers_op.grid, np.full(32, 0.3))
    assert np.allclose(apply_values(burgers_op, u.values), 0.0)


def test_two_subinteractions():
    grid = Grid((8, 8), 0.125)
    spec = kernel_spec(ONE_SIDED, 0.25, 'constant', partition=((0,), (1,)), dim=2)
    op = assemble(spec, [upwind_advection(), godunov_burgers()], grid)
    assert op.k == 2
    # each subinteraction contributes 2 K_i * (1/2 * 8 + 1/2 * 4)
    assert lipschitz_bound(op) == pytest.approx(2 * 1 * 6 + 2 * 2 * 6)
    with pytest.raises(ValueError):
        assemble(spec, [upwind_advection()], grid)


def test_out_of_range_warning(caplog, burgers_op):
    u = GridField(burgers_op.grid, np.linspace(0, 2, 32))
    with caplog.at_level(logging.WARNING):
        apply_B(burgers_op, u)
    assert 'leaves the certified range' in caplog.text


def test_wrong_grid(burgers_op):
    with pytest.raises(GridError):
        apply_B(burgers_op, GridField(Grid(16, 1.0), np.zeros(16)))
