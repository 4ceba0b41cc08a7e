"""
The command functions behind scripts/nonloclaw.py. Each returns the process exit status:
0 pass, 1 property failure, 2 configuration error, 3 solver failure.
"""
from dataclasses import asdict, replace
from functools import wraps
from os import path
import json
import logging
import os
import time

import altair as alt
import numpy as np
import pandas as pd

from nonloclaw import __version__
from nonloclaw.fluxes import max_wave_speed
from nonloclaw.grid_core import GridField, write_field_csv
from nonloclaw.resolvent import ResolventOptions, solve_resolvent, solve_regularized, resolvent_property_suite
from nonloclaw.run_config import RunConfig, get_out_dir
from nonloclaw.semigroup import (EXPLICIT, FORCED, evolve_implicit, evolve_explicit, evolve_forced,
                                 local_limit_study, write_trajectory, read_trajectory, MANIFEST_NAME)
from nonloclaw.verify import (bump_family, entropy_audit, write_entropy_report, trajectory_pair_report,
                             check_report)
from nonloclaw.utils import (ConfigError, KernelError, GridError, CFLError, NonFiniteError, FluxConsistencyError,
                             SolverDivergenceError, setup_logger, close_file_handlers, atomic_write, file_sha256)

EXIT_PASS = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3
LOG_NAME = 'nonloclaw.log'
RUN_MANIFEST = 'run_manifest.json'
TIMING_FILE = 'timing.json'
SNAPSHOT_DIR = 'snapshots'
COMPARE_AMPLITUDE = 0.1


def exit_status(command):
    """Run a command, mapping the library's exceptions onto exit codes and closing the log file"""
    @wraps(command)
    def wrapper(*args, logger=None, **kwargs):
        logger = logging.getLogger("nonloclaw") if logger is None else logger
        setup_logger(logger)
        try:
            return command(*args, logger=logger, **kwargs)
        except (SolverDivergenceError, NonFiniteError) as err:
            logger.critical(f"Solver failure: {err}")
            return EXIT_SOLVER_FAILURE
        except FluxConsistencyError as err:
            logger.critical(f"Property failure: {err}")
            return EXIT_PROPERTY_FAILURE
        except (ConfigError, KernelError, GridError, CFLError, ValueError) as err:
            logger.critical(f"Configuration error: {err}")
            return EXIT_CONFIG_ERROR
        finally:
            close_file_handlers(logger)
    return wrapper


def _prepare(config_loc, out, seed, logger):
    config = RunConfig(logger, config_loc, seed)
    output_dir = get_out_dir(out, config.out_dir)
    os.makedirs(output_dir, exist_ok=True)
    log_file_path = path.join(output_dir, LOG_NAME)
    setup_logger(logger, log_file_path)
    logger.info(f"The log file is created at {log_file_path}")
    logger.info(f"Loaded config {config_loc}")
    return config, output_dir


def _require(config, section, command):
    if not config.has(section):
        raise ConfigError(f"{command} needs a [{section}] section in {config.config_loc}")


def _frame_to_csv(frame: pd.DataFrame, file_path):
    atomic_write(file_path, frame.to_csv(index=False, lineterminator='\n', float_format=repr))


def _write_json(data, file_path):
    atomic_write(file_path, json.dumps(data, indent=2, sort_keys=True, default=str) + '\n')


def _inventory(output_dir, names):
    return {name: file_sha256(path.join(output_dir, name)) for name in sorted(names)}


def _write_manifest(output_dir, command, config, artifacts, extra=None):
    manifest = {'command': command, 'version': __version__, 'config': config.settings(),
                'artifacts': _inventory(output_dir, artifacts)}
    if extra:
        manifest.update(extra)
    _write_json(manifest, path.join(output_dir, RUN_MANIFEST))
    return manifest


def _write_timing(output_dir, started, logger):
    elapsed = time.perf_counter() - started
    logger.info(f"Wall-clock time {elapsed:.3f} s")
    _write_json({'wall_clock_seconds': elapsed}, path.join(output_dir, TIMING_FILE))


def snapshot_plot_script(files, times, grid, title='nonloclaw') -> str:
    """gnuplot script for field CSVs; 1D overlays every snapshot, 2D draws the last one as a heat map"""
    lines = ["set datafile separator ','", "set key autotitle columnhead", f"set title '{title}'"]
    if grid.dim == 1:
        lines += [f"dx = {grid.spacing[0]!r}", f"x0 = {grid.origin[0]!r}", "set xlabel 'x'", "set ylabel 'u'"]
        curves = [f"'{name}' using (x0 + ($1 + 0.5) * dx):2 with lines title 't = {t!r}'"
                  for name, t in zip(files, times)]
        lines.append('plot ' + ', \\\n     '.join(curves))
    else:
        lines += [f"dx = {grid.spacing[0]!r}", f"dy = {grid.spacing[1]!r}", "set view map", "set pm3d at b",
                  f"splot '{files[-1]}' using ($1 * dx):($2 * dy):3 with pm3d title 't = {times[-1]!r}'"]
    return '\n'.join(lines) + '\n'


def study_plot_script(csv_name) -> str:
    return '\n'.join([
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'horizon'",
        "set ylabel 'L1 error'",
        f"plot '{csv_name}' using ($1 eq 'nonlocal' ? $2 : 1/0):4 every ::1 with linespoints title 'nonlocal', \\",
        f"     '{csv_name}' using ($1 eq 'baseline' ? $2 : 1/0):4 every ::1 with points pt 7 title 'local baseline'",
    ]) + '\n'


def make_study_chart(table: pd.DataFrame) -> alt.Chart:
    return alt.Chart(table, title='Local limit').mark_line(point=True).encode(
        x=alt.X('delta:Q', title='Horizon', scale=alt.Scale(type='log')),
        y=alt.Y('l1_error:Q', title='L1 error', scale=alt.Scale(type='log')),
        color=alt.Color('kind:N', legend=alt.Legend(title='Scheme')),
        tooltip=[alt.Tooltip('delta_cells', title='Horizon (cells)'),
                 alt.Tooltip('l1_error', title='L1 error'),
                 alt.Tooltip('order', title='Empirical order')]
    )


def _evolve(config, op, logger):
    if config.scheme == EXPLICIT:
        return evolve_explicit(op, config.initial, config.T, config.step, logger)
    if config.scheme == FORCED:
        return evolve_forced(op, config.initial, config.T, config.step, config.forcing, config.solver, logger)
    return evolve_implicit(op, config.initial, config.T, config.step, config.solver, logger)


@exit_status
def run_cmd(config_loc, out=None, seed=None, threads=1, logger=None):
    started = time.perf_counter()
    config, output_dir = _prepare(config_loc, out, seed, logger)
    _require(config, 'scheme', 'run')
    op = config.operator()
    logger.info(f"Built operator with {op.k} subinteractions, L_h = {op.lipschitz_bound!r}")
    speed = max(max_wave_speed(i) for i in op.fluxes)
    if speed > 0:
        logger.info(f"Waves reach the periodic seam after t = {min(op.grid.extent) / (2 * speed)!r}")
    traj = _evolve(config, op, logger)
    traj = replace(traj, metadata={'flux': config.flux.name, 'kernel': config.kernel.profile_name,
                                   'symmetry': config.kernel.symmetry, 'version': __version__})
    logger.info(f"Evolved {len(traj.times) - 1} steps to T = {traj.final_time!r}")
    snapshots = write_trajectory(traj, path.join(output_dir, SNAPSHOT_DIR), config.snapshot_every, threads)
    files = [path.join(SNAPSHOT_DIR, i['file']) for i in snapshots['snapshots']]
    atomic_write(path.join(output_dir, 'plot.gp'),
                 snapshot_plot_script(files, [i['time'] for i in snapshots['snapshots']], traj.grid))
    chain = [path.join(SNAPSHOT_DIR, snapshots['chain']['file'])] if snapshots['chain'] else []
    _write_manifest(output_dir, 'run', config, files + chain + [path.join(SNAPSHOT_DIR, MANIFEST_NAME), 'plot.gp'],
                    {'residuals': [i.final_residual for i in traj.reports],
                     'iterations': [i.iterations for i in traj.reports],
                     'residual_budget': traj.residual_budget})
    _write_timing(output_dir, started, logger)
    logger.info("Completed run")
    return EXIT_PASS


def compare_field(config):
    """A second initial field near the configured one, inside its value range, for pairwise properties"""
    u0 = config.initial
    low, high = float(np.min(u0.values)), float(np.max(u0.values))
    amplitude = COMPARE_AMPLITUDE * (high - low if high > low else 1.0)
    rng = np.random.default_rng(config.compare_seed)
    noise = rng.uniform(-amplitude, amplitude, u0.grid.shape)
    return GridField(u0.grid, np.clip(u0.values + noise, low, high))


def _log_failures(name, failures, logger):
    for _, row in failures.iterrows():
        logger.critical(f"{name}: {row['property']} fails with margin {row['margin']!r}")


@exit_status
def verify_cmd(config_loc, out=None, seed=None, threads=1, trajectory=None, logger=None):
    started = time.perf_counter()
    config, output_dir = _prepare(config_loc, out, seed, logger)
    op = config.operator()
    artifacts, passed = list(), True
    if trajectory is not None:
        traj = read_trajectory(trajectory)
        if traj.grid != config.grid:
            raise GridError(f"Trajectory in {trajectory} does not live on the configured grid")
        logger.info(f"Read {len(traj.times)} snapshots from {trajectory}")
    else:
        _require(config, 'scheme', 'verify')
        v0 = compare_field(config)
        traj = evolve_implicit(op, config.initial, config.T, config.step, config.solver, logger)
        v_traj = evolve_implicit(op, v0, config.T, config.step, config.solver, logger)
        theorem = trajectory_pair_report(traj, v_traj, config.property_tol, config.shift_radius, logger)
        _frame_to_csv(theorem, path.join(output_dir, 'theorem_report.csv'))
        resolvent = resolvent_property_suite(op, [(config.initial, v0)], config.step, config.solver, logger=logger)
        _frame_to_csv(resolvent, path.join(output_dir, 'resolvent_report.csv'))
        artifacts += ['theorem_report.csv', 'resolvent_report.csv']
        for name, report in (('trajectory properties', theorem), ('resolvent properties', resolvent)):
            ok, failures = check_report(report)
            _log_failures(name, failures, logger)
            passed &= ok
        logger.info("Checked trajectory and resolvent properties")
    family = bump_family(traj.grid, traj.final_time, config.n_space, config.n_time)
    entropy = entropy_audit(traj, op, family, config.c_samples, threads=threads, logger=logger)
    write_entropy_report(entropy, path.join(output_dir, 'entropy_report.csv'))
    artifacts.append('entropy_report.csv')
    if not entropy.passed:
        logger.critical(entropy.summary())
    passed &= entropy.passed
    _write_manifest(output_dir, 'verify', config, artifacts, {'passed': bool(passed)})
    _write_timing(output_dir, started, logger)
    logger.info(f"Verification {'passed' if passed else 'failed'}")
    return EXIT_PASS if passed else EXIT_PROPERTY_FAILURE


@exit_status
def study_cmd(config_loc, out=None, seed=None, threads=1, logger=None):
    started = time.perf_counter()
    config, output_dir = _prepare(config_loc, out, seed, logger)
    _require(config, 'study', 'study')
    _require(config, 'scheme', 'study')
    deltas = [i * config.grid.spacing[0] for i in config.deltas_cells]
    table = local_limit_study(config.flux, config.kernel.profile_name, config.study_initial_spec(), config.T,
                              deltas, config.grid, config.study_symmetry, threads, logger,
                              samples=config.get_floats('kernel', 'samples', None))
    nonlocal_errors = table.loc[table['kind'] == 'nonlocal'].sort_values('delta', ascending=False)['l1_error']
    if not np.all(np.diff(nonlocal_errors.to_numpy()) < 0):
        logger.warning("L1 errors do not decrease as the horizon shrinks")
    _frame_to_csv(table, path.join(output_dir, 'study.csv'))
    atomic_write(path.join(output_dir, 'study.gp'), study_plot_script('study.csv'))
    atomic_write(path.join(output_dir, 'study_chart.json'), make_study_chart(table).to_json() + '\n')
    _write_manifest(output_dir, 'study', config, ['study.csv', 'study.gp', 'study_chart.json'])
    _write_timing(output_dir, started, logger)
    logger.info("Completed study")
    return EXIT_PASS


@exit_status
def resolvent_cmd(config_loc, out=None, seed=None, logger=None):
    started = time.perf_counter()
    config, output_dir = _prepare(config_loc, out, seed, logger)
    _require(config, 'resolvent', 'resolvent')
    op = config.operator()
    opts = config.solver if config.has('scheme') else ResolventOptions()
    g = config.initial
    if config.viscosity > 0:
        u, report = solve_regularized(op, g, config.lam, config.viscosity, opts, logger=logger)
    else:
        u, report = solve_resolvent(op, g, config.lam, opts, logger=logger)
    logger.info(f"{report.method_used} reached residual {report.final_residual!r} in {report.iterations} "
                f"iterations")
    write_field_csv(u, path.join(output_dir, 'solution.csv'))
    _write_manifest(output_dir, 'resolvent', config, ['solution.csv'], {'solve_report': asdict(report)})
    _write_timing(output_dir, started, logger)
    logger.info("Completed resolvent solve")
    return EXIT_PASS
