import pytest

import json
import logging
import os

import numpy as np
import pandas as pd

from nonloclaw.experiments import run_cmd, verify_cmd, study_cmd, resolvent_cmd, compare_field, \
    snapshot_plot_script, EXIT_PASS, EXIT_PROPERTY_FAILURE, EXIT_CONFIG_ERROR, RUN_MANIFEST, TIMING_FILE, LOG_NAME
from nonloclaw.grid_core import Grid, read_field_csv
from nonloclaw.run_config import RunConfig, bundled_config
from nonloclaw.semigroup import read_trajectory, write_trajectory
from nonloclaw.verify import expansion_shock_trajectory
from nonloclaw.utils import setup_logger

SMALL_SHOCK = """[grid]
cells = 64
extent = 2.0
origin = -1.0

[kernel]
symmetry = even_symmetric
horizon_cells = {horizon}
profile = triangle

[flux]
name = engquist_osher_burgers

[initial]
profile = riemann
u_left = 1.0
u_right = 0.0
x0 = 0.0

[scheme]
kind = implicit
T = 0.25
steps = 16
"""

SMALL_STUDY = """[grid]
cells = 256
extent = 2.0
origin = -1.0

[kernel]
symmetry = one_sided
horizon_cells = 2
profile = constant

[flux]
name = engquist_osher_burgers

[initial]
profile = riemann
u_left = 1.0
u_right = 0.0
x0 = 0.0

[scheme]
kind = explicit
T = 0.25

[study]
deltas_cells = 8, 4, 2
oracle = riemann
"""


@pytest.fixture()
def logger():
    logger = logging.getLogger('test_log')
    setup_logger(logger)
    return logger


def write_config(tmpdir, text, name='run.cfg'):
    loc = tmpdir.join(name)
    loc.write(text)
    return str(loc)


def read_bytes(file_path):
    with open(file_path, 'rb') as f:
        return f.read()


def test_run_constant(tmpdir, logger):
    out = str(tmpdir.join('constant'))
    assert run_cmd(bundled_config('constant'), out=out, logger=logger) == EXIT_PASS
    for name in (RUN_MANIFEST, TIMING_FILE, LOG_NAME, 'plot.gp', os.path.join('snapshots', 'manifest.json')):
        assert os.path.isfile(os.path.join(out, name))
    traj = read_trajectory(os.path.join(out, 'snapshots'))
    assert len(traj.states) == 9
    assert os.path.isfile(os.path.join(out, 'snapshots', 'chain.csv'))
    assert all(np.all(i.values == 0.25) for i in traj.states)
    with open(os.path.join(out, 'snapshots', 'manifest.json')) as f:
        assert [i['index'] for i in json.load(f)['snapshots']] == [0, 2, 4, 6, 8]
    with open(os.path.join(out, RUN_MANIFEST)) as f:
        manifest = json.load(f)
    assert manifest['command'] == 'run'
    assert manifest['residual_budget'] == 0.0
    assert 'plot.gp' in manifest['artifacts']
    # the file handler is released once the command returns
    assert not any(isinstance(i, logging.FileHandler) for i in logger.handlers)


def test_run_is_reproducible(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4))
    first, second = str(tmpdir.join('first')), str(tmpdir.join('second'))
    assert run_cmd(config_loc, out=first, threads=1, logger=logger) == EXIT_PASS
    assert run_cmd(config_loc, out=second, threads=4, logger=logger) == EXIT_PASS
    names = sorted(os.listdir(os.path.join(first, 'snapshots')))
    assert names == sorted(os.listdir(os.path.join(second, 'snapshots')))
    for name in names:
        assert read_bytes(os.path.join(first, 'snapshots', name)) == \
            read_bytes(os.path.join(second, 'snapshots', name))
    assert read_bytes(os.path.join(first, RUN_MANIFEST)) == read_bytes(os.path.join(second, RUN_MANIFEST))


def test_bad_horizon_is_a_config_error(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=0.5))
    assert run_cmd(config_loc, out=str(tmpdir.join('out')), logger=logger) == EXIT_CONFIG_ERROR


def test_missing_section_is_a_config_error(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4))
    assert study_cmd(config_loc, out=str(tmpdir.join('out')), logger=logger) == EXIT_CONFIG_ERROR
    assert resolvent_cmd(config_loc, out=str(tmpdir.join('out')), logger=logger) == EXIT_CONFIG_ERROR


def test_resolvent(tmpdir, logger):
    out = str(tmpdir.join('resolvent'))
    assert resolvent_cmd(bundled_config('resolvent'), out=out, logger=logger) == EXIT_PASS
    u = read_field_csv(os.path.join(out, 'solution.csv'))
    assert u.grid.cells == (64,)
    assert np.all(np.isfinite(u.values))
    with open(os.path.join(out, RUN_MANIFEST)) as f:
        report = json.load(f)['solve_report']
    assert report['final_residual'] <= report['tol_residual']


def test_study(tmpdir, logger):
    out = str(tmpdir.join('study'))
    assert study_cmd(write_config(tmpdir, SMALL_STUDY), out=out, logger=logger) == EXIT_PASS
    table = pd.read_csv(os.path.join(out, 'study.csv'))
    assert len(table) == 4
    assert list(table['kind']).count('baseline') == 1
    for name in ('study.gp', 'study_chart.json', RUN_MANIFEST):
        assert os.path.isfile(os.path.join(out, name))


def test_verify_shock(tmpdir, logger):
    out = str(tmpdir.join('verify'))
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4))
    assert verify_cmd(config_loc, out=out, logger=logger) == EXIT_PASS
    for name in ('theorem_report.csv', 'resolvent_report.csv', 'entropy_report.csv'):
        assert os.path.isfile(os.path.join(out, name))
    with open(os.path.join(out, RUN_MANIFEST)) as f:
        assert json.load(f)['passed']


def test_verify_written_trajectory(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4))
    run_out = str(tmpdir.join('run'))
    assert run_cmd(config_loc, out=run_out, logger=logger) == EXIT_PASS
    assert verify_cmd(config_loc, out=str(tmpdir.join('audit')), trajectory=os.path.join(run_out, 'snapshots'),
                      logger=logger) == EXIT_PASS


def test_verify_thinned_snapshots(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4) + "\n[outputs]\nsnapshot_every = 4\n")
    run_out = str(tmpdir.join('run'))
    assert run_cmd(config_loc, out=run_out, logger=logger) == EXIT_PASS
    with open(os.path.join(run_out, 'snapshots', 'manifest.json')) as f:
        assert [i['index'] for i in json.load(f)['snapshots']] == [0, 4, 8, 12, 16]
    out = str(tmpdir.join('audit'))
    assert verify_cmd(config_loc, out=out, trajectory=os.path.join(run_out, 'snapshots'),
                      logger=logger) == EXIT_PASS
    with open(os.path.join(out, 'entropy_report.csv')) as f:
        assert f.read().splitlines()[-1].startswith('# entropy audit PASS')



def test_verify_flags_an_expansion_shock(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4))
    grid = RunConfig(logger, config_loc).grid
    directory = str(tmpdir.join('expansion'))
    write_trajectory(expansion_shock_trajectory(grid, 0.5, 8), directory)
    out = str(tmpdir.join('audit'))
    assert verify_cmd(config_loc, out=out, trajectory=directory, logger=logger) == EXIT_PROPERTY_FAILURE
    with open(os.path.join(out, 'entropy_report.csv')) as f:
        assert f.read().splitlines()[-1].startswith('# entropy audit FAIL')


def test_verify_rejects_a_foreign_grid(tmpdir, logger):
    config_loc = write_config(tmpdir, SMALL_SHOCK.format(horizon=4))
    directory = str(tmpdir.join('expansion'))
    write_trajectory(expansion_shock_trajectory(Grid.from_extent(32, 2.0, -1.0), 0.5, 8), directory)
    assert verify_cmd(config_loc, out=str(tmpdir.join('audit')), trajectory=directory,
                      logger=logger) == EXIT_CONFIG_ERROR


def test_compare_field(logger):
    config = RunConfig(logger, bundled_config('shock'))
    v0 = compare_field(config)
    assert v0.grid == config.grid
    assert np.all((v0.values >= 0.0) & (v0.values <= 1.0))
    assert np.array_equal(v0.values, compare_field(config).values)


def test_snapshot_plot_script():
    script = snapshot_plot_script(['a.csv', 'b.csv'], [0.0, 0.5], Grid.from_extent(4, 1.0))
    assert "'a.csv'" in script and "'b.csv'" in script
    assert 't = 0.5' in script
    assert 'splot' in snapshot_plot_script(['c.csv'], [1.0], Grid.from_extent((4, 4), 1.0))
