import pytest

import numpy as np
import pandas as pd

from nonloclaw.grid_core import Grid, GridField
from nonloclaw.kernels import EVEN_SYMMETRIC, ONE_SIDED, kernel_spec
from nonloclaw.fluxes import engquist_osher_burgers, upwind_advection
from nonloclaw.nonlocal_operator import assemble, cfl_constant
from nonloclaw.resolvent import ResolventOptions
from nonloclaw.semigroup import evolve_implicit, evolve_explicit, initial_condition
from nonloclaw.verify import REPORT_COLUMNS, TestFunctionFamily, bump_family, entropy_residual, c_values, \
    entropy_audit, write_entropy_report, expansion_shock_trajectory, theorem_suite, check_report, \
    trajectory_pair_report


@pytest.fixture()
def shock_op():
    grid = Grid.from_extent(64, 2.0, -1.0)
    return assemble(kernel_spec(EVEN_SYMMETRIC, 4 / 32, 'triangle'), engquist_osher_burgers(), grid)


@pytest.fixture()
def shock_trajectory(shock_op):
    u0 = initial_condition(shock_op.grid, 'riemann', u_left=1.0, u_right=0.0, x0=0.0)
    return evolve_implicit(shock_op, u0, 0.25, 0.25 / 16, ResolventOptions(tol_residual=1e-13))


@pytest.fixture()
def fine_shock_op():
    grid = Grid.from_extent(128, 2.0, -1.0)
    return assemble(kernel_spec(EVEN_SYMMETRIC, 4 * grid.spacing[0], 'triangle'), engquist_osher_burgers(), grid)


def test_bump_family(shock_op):
    family = bump_family(shock_op.grid, 0.5, n_space=5, n_time=5)
    assert len(family) == 25
    assert family.widths[0] == pytest.approx(0.9 * 0.5 / 6)
    assert family.widths[1] == pytest.approx(0.36)
    assert sorted({i[1] for i in family.centers}) == pytest.approx([-0.8, -0.4, 0.0, 0.4, 0.8])
    values = family.values(0, [0.0, family.centers[0][0], 0.5], shock_op.grid)
    assert values.shape == (3, 64)
    assert np.all(values[0] == 0) and np.all(values[2] == 0)
    assert np.all(values >= 0)


def test_bump_family_rejects_bad_supports(shock_op):
    with pytest.raises(ValueError):
        TestFunctionFamily([(0.01, 0.0)], (0.1, 0.1)).validate(1.0, shock_op.grid)
    with pytest.raises(ValueError):
        TestFunctionFamily([(0.5, 0.0)], (0.1, 1.0)).validate(1.0, shock_op.grid)
    with pytest.raises(ValueError):
        TestFunctionFamily([(0.5, 0.0)], (0.1,)).validate(1.0, shock_op.grid)


def test_constant_trajectory_has_zero_residual(shock_op):
    u0 = GridField(shock_op.grid, np.full(64, 0.3))
    traj = evolve_implicit(shock_op, u0, 0.5, 0.05)
    family = bump_family(shock_op.grid, 0.5, 3, 3)
    for i in range(len(family)):
        f = family.values(i, traj.times, traj.grid)
        for c in (-1.0, 0.1, 0.3, 0.7):
            assert entropy_residual(traj, shock_op, f, c) == pytest.approx(0.0, abs=1e-12)


def test_sentinel_levels_reduce_to_the_weak_form(shock_op, shock_trajectory):
    family = bump_family(shock_op.grid, 0.25, 3, 3)
    budget = shock_trajectory.residual_budget
    for i in range(len(family)):
        f = family.values(i, shock_trajectory.times, shock_op.grid)
        for c in (-2.0, 2.0):
            assert entropy_residual(shock_trajectory, shock_op, f, c) == pytest.approx(0.0, abs=budget + 1e-12)


def test_explicit_alignment_is_exact():
    grid = Grid.from_extent(64, 1.0)
    op = assemble(kernel_spec(ONE_SIDED, 2 / 64, 'constant'), upwind_advection(), grid)
    u0 = initial_condition(grid, 'gaussian', width=0.1)
    traj = evolve_explicit(op, u0, 0.2, 0.9 / cfl_constant(op))
    family = bump_family(grid, 0.2, 2, 2)
    for i in range(len(family)):
        f = family.values(i, traj.times, grid)
        assert entropy_residual(traj, op, f, 5.0) == pytest.approx(0.0, abs=1e-12)
        assert entropy_residual(traj, op, f, 0.5) >= -1e-12


def test_entropy_residual_rejects_bad_test_functions(shock_op, shock_trajectory):
    shape = (len(shock_trajectory.times), 64)
    with pytest.raises(ValueError):
        entropy_residual(shock_trajectory, shock_op, -np.ones(shape), 0.0)
    with pytest.raises(ValueError):
        entropy_residual(shock_trajectory, shock_op, np.ones((2, 64)), 0.0)


def test_c_values(shock_trajectory):
    cs = c_values(shock_trajectory, 7)
    assert len(cs) == 9
    assert cs[0] == pytest.approx(-2.0)
    assert cs[-1] == pytest.approx(2.0)
    assert cs[1] == pytest.approx(0.0, abs=1e-12)
    assert cs[-2] == pytest.approx(1.0)
    assert np.all(np.diff(cs) >= 0)


def test_implicit_shock_passes_entropy_audit(tmpdir, shock_op, shock_trajectory):
    family = bump_family(shock_op.grid, 0.25)
    report = entropy_audit(shock_trajectory, shock_op, family, c_samples=7)
    assert report.passed
    assert len(report.residuals) == 25 * 9
    assert list(report.residuals.columns) == ['member', 't_center', 'x0_center', 'width_time', 'width_space', 'c',
                                              'residual']
    assert report.tol == pytest.approx(1e-8 * 1.0 * 0.25 + shock_trajectory.residual_budget)
    threaded = entropy_audit(shock_trajectory, shock_op, family, c_samples=7, threads=4)
    assert threaded.residuals.equals(report.residuals)
    file_path = str(tmpdir.join('entropy_report.csv'))
    write_entropy_report(report, file_path)
    with open(file_path) as f:
        lines = f.read().splitlines()
    assert lines[0].startswith('member,t_center')
    assert lines[-1].startswith('# entropy audit PASS')


def test_expansion_shock_fails_entropy_audit(shock_op):
    traj = expansion_shock_trajectory(shock_op.grid, 0.5, 8)
    assert traj.metadata['control'] == 'expansion_shock'
    report = entropy_audit(traj, shock_op, bump_family(shock_op.grid, 0.5))
    assert not report.passed
    assert report.min_residual <= -1e-3
    assert report.offending['x0_center'] == pytest.approx(0.0)
    assert 'FAIL' in report.summary()


def test_theorem_suite(fine_shock_op):
    grid = fine_shock_op.grid
    rng = np.random.default_rng(8)
    T = 0.5
    cases = [{'u0': GridField(grid, rng.uniform(-1, 1, 128)), 'v0': GridField(grid, rng.uniform(-1, 1, 128)),
              'T': T, 'eps': T / 64},
             {'u0': initial_condition(grid, 'riemann', u_left=1.0, u_right=0.0, x0=0.0),
              'v0': initial_condition(grid, 'gaussian', width=0.2), 'T': T, 'eps': T / 64}]
    report = theorem_suite(fine_shock_op, cases, ResolventOptions(tol_residual=1e-13), shift_radius=4)
    assert list(report.columns) == REPORT_COLUMNS
    assert len(report) == 2 * 10
    passed, failures = check_report(report)
    assert passed, failures


def test_fine_shock_passes_entropy_audit(fine_shock_op):
    u0 = initial_condition(fine_shock_op.grid, 'riemann', u_left=1.0, u_right=0.0, x0=0.0)
    traj = evolve_implicit(fine_shock_op, u0, 0.5, 0.5 / 64, ResolventOptions(tol_residual=1e-13))
    report = entropy_audit(traj, fine_shock_op, bump_family(fine_shock_op.grid, 0.5), c_samples=7)
    assert report.passed
    assert report.min_residual >= -1e-8


def test_trajectory_pair_report_matches_theorem_suite(shock_op):
    u0 = initial_condition(shock_op.grid, 'riemann', u_left=1.0, u_right=0.0, x0=0.0)
    v0 = initial_condition(shock_op.grid, 'gaussian', width=0.2)
    opts = ResolventOptions(tol_residual=1e-13)
    u_traj = evolve_implicit(shock_op, u0, 0.25, 0.25 / 16, opts)
    v_traj = evolve_implicit(shock_op, v0, 0.25, 0.25 / 16, opts)
    paired = trajectory_pair_report(u_traj, v_traj, shift_radius=4)
    suite = theorem_suite(shock_op, [{'u0': u0, 'v0': v0, 'T': 0.25, 'eps': 0.25 / 16}], opts, shift_radius=4)
    assert paired.equals(suite)
    assert check_report(paired)[0]


def test_check_report_flags_failures():
    report = pd.DataFrame(
        [{'case': 0, 'property': 'mass', 'time': 0.0, 'lhs': 1.0, 'rhs': 0.0, 'margin': -1.0, 'passed': False}],
        columns=REPORT_COLUMNS)
    passed, failures = check_report(report)
    assert not passed
    assert len(failures) == 1
