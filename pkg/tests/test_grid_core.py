import pytest

import numpy as np

from nonloclaw.grid_core import Grid, GridField, ShiftVector, constant_field, coordinates, periodic_distance, \
    shift, diff_quotient, norm, mass, positive_part, negative_part, inner, translation_modulus, lattice_shifts, \
    laplacian_matrix, write_field_csv, read_field_csv, field_to_csv_text
from nonloclaw.utils import GridError, NonFiniteError


@pytest.fixture()
def grid_1d():
    return Grid.from_extent(8, 1.0)


@pytest.fixture()
def grid_2d():
    return Grid.from_extent((4, 6), (1.0, 3.0), (-0.5, 0.0))


def test_grid(grid_1d, grid_2d):
    assert grid_1d.spacing == (0.125,)
    assert grid_1d.cell_volume == 0.125
    assert grid_2d.shape == (4, 6)
    assert grid_2d.size == 24
    assert grid_2d.spacing == (0.25, 0.5)
    assert grid_2d.extent == (1.0, 3.0)
    assert grid_2d.origin == (-0.5, 0.0)
    assert Grid((4, 4), 0.5).spacing == (0.5, 0.5)


@pytest.mark.parametrize('cells, spacing', [((1,), (1.0,)), ((4,), (0.0,)), ((4, 4, 4), (1.0,)),
                                            ((4,), (1.0, 1.0))])
def test_grid_errors(cells, spacing):
    with pytest.raises(GridError):
        Grid(cells, spacing)


def test_grid_field(grid_1d):
    u = GridField(grid_1d, np.arange(8))
    assert not u.values.flags.writeable
    assert list((u + 1).values) == list(np.arange(8) + 1.0)
    assert list((2 * u - u).values) == list(u.values)
    with pytest.raises(NonFiniteError):
        GridField(grid_1d, [np.nan] + [0.0] * 7)
    with pytest.raises(GridError):
        GridField(grid_1d, np.zeros(5))


def test_coordinates(grid_1d, grid_2d):
    (x,) = coordinates(grid_1d)
    assert x[0] == 0.0625
    assert x[-1] == 0.9375
    x, y = coordinates(grid_2d)
    assert x.shape == (4, 6)
    assert x[0, 0] == -0.375
    assert y[0, 5] == 2.75


def test_periodic_distance():
    assert periodic_distance(0.9, 0.1, 1.0) == pytest.approx(-0.2)
    assert periodic_distance(0.3, 0.1, 1.0) == pytest.approx(0.2)


def test_shift(grid_1d, grid_2d):
    u = GridField(grid_1d, np.arange(8))
    assert list(shift(u, ShiftVector(1)).values) == [1, 2, 3, 4, 5, 6, 7, 0]
    assert list(shift(u, ShiftVector(-1)).values) == [7, 0, 1, 2, 3, 4, 5, 6]
    v = GridField(grid_2d, np.arange(24).reshape(4, 6))
    shifted = shift(v, ShiftVector((1, 2)))
    assert shifted.values[0, 0] == v.values[1, 2]
    assert shifted.values[3, 5] == v.values[0, 1]
    # shifting is a permutation, it never changes norms
    assert norm(shifted, 1) == norm(v, 1)
    with pytest.raises(GridError):
        shift(u, ShiftVector(8))


def test_diff_quotient(grid_1d):
    u = GridField(grid_1d, np.arange(8))
    quotient = diff_quotient(u, ShiftVector(1))
    assert quotient.values[0] == pytest.approx(8.0)
    assert quotient.values[-1] == pytest.approx(-56.0)
    with pytest.raises(GridError):
        diff_quotient(u, ShiftVector(0))


def test_summation_by_parts(grid_1d):
    rng = np.random.default_rng(3)
    u = GridField(grid_1d, rng.normal(size=8))
    v = GridField(grid_1d, rng.normal(size=8))
    s = ShiftVector(3)
    assert inner(v, diff_quotient(u, s)) == pytest.approx(inner(u, diff_quotient(v, -s)), abs=1e-12)


def test_norms(grid_1d):
    u = GridField(grid_1d, [1.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, -2.0])
    assert norm(u, 1) == pytest.approx(0.75)
    assert norm(u, 2) == pytest.approx(np.sqrt(10 * 0.125))
    assert norm(u, np.inf) == 2.0
    assert mass(u) == 0.0
    assert list(positive_part(u).values[:3]) == [1.0, 0.0, 2.0]
    assert list(negative_part(u).values[:3]) == [0.0, 1.0, 0.0]
    with pytest.raises(ValueError):
        norm(u, 0.5)


def test_translation_modulus(grid_1d):
    u = GridField(grid_1d, [0, 0, 0, 1, 1, 0, 0, 0])
    assert translation_modulus(u, ShiftVector(1)) == pytest.approx(2 * 0.125)
    assert translation_modulus(constant_field(grid_1d, 3.0), ShiftVector(2)) == 0.0


def test_lattice_shifts(grid_1d):
    shifts = lattice_shifts(grid_1d)
    assert len(shifts) == 14
    assert ShiftVector(0) not in shifts
    assert len(lattice_shifts(grid_1d, 2)) == 4
    assert len(lattice_shifts(Grid((4, 4), 1.0), 1)) == 8


def test_laplacian_matrix(grid_1d, grid_2d):
    lap = laplacian_matrix(grid_1d).toarray()
    assert lap[0, 0] == pytest.approx(-2 / 0.125 ** 2)
    assert lap[0, 7] == pytest.approx(1 / 0.125 ** 2)
    assert np.allclose(lap.sum(axis=1), 0.0)
    lap = laplacian_matrix(grid_2d).toarray()
    assert np.allclose(lap, lap.T)
    assert np.allclose(lap.sum(axis=1), 0.0)
    two_cells = laplacian_matrix(Grid(2, 1.0)).toarray()
    assert np.allclose(two_cells, [[-2.0, 2.0], [2.0, -2.0]])


def test_field_csv_round_trip(tmpdir, grid_2d):
    values = np.random.default_rng(5).normal(size=grid_2d.shape) / 3
    u = GridField(grid_2d, values)
    file_path = str(tmpdir.join('field.csv'))
    write_field_csv(u, file_path)
    read = read_field_csv(file_path)
    assert read.grid == grid_2d
    assert np.array_equal(read.values, u.values)
    assert field_to_csv_text(read) == field_to_csv_text(u)


def test_read_field_csv_rejects_other_files(tmpdir):
    file_path = tmpdir.join('other.csv')
    file_path.write('a,b\n1,2\n')
    with pytest.raises(GridError):
        read_field_csv(str(file_path))
