"""
Run configuration: INI-style files with [grid], [kernel], [flux], [scheme], [initial], [outputs], [study],
[resolvent] and [verify] sections, validated when loaded so every problem is reported against its line.
"""
from configparser import ConfigParser, Error as ConfigParserError
from os import path, getenv
from pkg_resources import resource_filename
import logging
import re

import numpy as np

from nonloclaw.grid_core import Grid
from nonloclaw.kernels import SYMMETRY_CLASSES, ONE_SIDED, kernel_spec, validate, build_stencils
from nonloclaw.fluxes import BUILTIN_FLUXES, make_flux, invariant_range
from nonloclaw.nonlocal_operator import assemble, cfl_constant
from nonloclaw.resolvent import METHODS, ResolventOptions
from nonloclaw.semigroup import SCHEMES, EXPLICIT, FORCED, INITIAL_PROFILES, ForcingSpec, initial_condition
from nonloclaw.utils import ConfigError, KernelError, setup_logger

OUT_ENV = "NONLOCLAW_OUT"
DEFAULT_OUT = "nonloclaw_out"
ORACLES = ('riemann', 'transport')
FORCINGS = ('none', 'decay', 'constant')
REQUIRED = object()
KEY_LINE = re.compile(r'^\s*([^=:#;\s][^=:]*?)\s*[=:]')
SECTION_LINE = re.compile(r'^\s*\[([^\]]+)\]')


def bundled_config(name: str) -> str:
    """Path of a config shipped with the package, e.g. bundled_config('shock')"""
    if not name.endswith('.cfg'):
        name = f"{name}.cfg"
    loc = path.abspath(resource_filename("nonloclaw", path.join("configs", name)))
    if not path.isfile(loc):
        raise ConfigError(f"No bundled config named {name}")
    return loc


def get_out_dir(out=None, configured=None):
    """--out, else [outputs] directory, else $NONLOCLAW_OUT, else ./nonloclaw_out"""
    for loc in (out, configured, getenv(OUT_ENV)):
        if loc:
            return loc
    return path.abspath(DEFAULT_OUT)


def _line_numbers(text):
    lines, section = dict(), None
    for lineno, line in enumerate(text.splitlines(), start=1):
        found = SECTION_LINE.match(line)
        if found:
            section = found.group(1).strip()
            lines[(section, None)] = lineno
            continue
        found = KEY_LINE.match(line)
        if found and section is not None:
            lines[(section, found.group(1).strip().lower())] = lineno
    return lines


class RunConfig:
    def __init__(self, logger, config_loc, seed=None):
        if logger is None:
            logger = logging.getLogger("nonloclaw.run_config")
            setup_logger(logger)
        self.logger = logger
        self.config_loc = config_loc
        self.load_config(config_loc)
        if seed is not None:
            self.seed = int(seed)
        self.validate()

    def load_config(self, config_file):
        if not path.isfile(config_file):
            raise ConfigError(f"Config file {config_file} does not exist")
        with open(config_file) as f:
            text = f.read()
        self.lines = _line_numbers(text)
        self.parser = ConfigParser(inline_comment_prefixes=('#', ';'))
        try:
            self.parser.read_string(text, source=config_file)
        except ConfigParserError as err:
            raise ConfigError(str(err).splitlines()[0], getattr(err, 'lineno', None)) from err
        self.seed = self.get('initial', 'seed', int, None)

    def error(self, section, key, message):
        lineno = self.lines.get((section, key.lower()), self.lines.get((section, None)))
        return ConfigError(f"[{section}] {key}: {message}", lineno)

    def has(self, section, key=None):
        if key is None:
            return self.parser.has_section(section)
        return self.parser.has_option(section, key)

    def get(self, section, key, kind=str, default=REQUIRED):
        if not self.has(section, key):
            if default is REQUIRED:
                raise self.error(section, key, "is required")
            return default
        raw = self.parser.get(section, key).strip()
        try:
            return kind(raw)
        except (TypeError, ValueError) as err:
            raise self.error(section, key, f"cannot read '{raw}': {err}") from err

    def get_floats(self, section, key, default=REQUIRED):
        return self.get(section, key, lambda raw: tuple(float(i) for i in re.split(r'[,\s]+', raw) if i),
                        default)

    def get_choice(self, section, key, choices, default=REQUIRED):
        value = self.get(section, key, str, default)
        if value not in choices:
            raise self.error(section, key, f"'{value}' is not one of {', '.join(choices)}")
        return value

    def positive(self, section, key, kind=float, default=REQUIRED):
        value = self.get(section, key, kind, default)
        if value is not None and not value > 0:
            raise self.error(section, key, f"must be positive, got {value}")
        return value

    def validate(self):
        for section in ('grid', 'kernel', 'flux', 'initial'):
            if not self.has(section):
                raise ConfigError(f"Missing [{section}] section in {self.config_loc}")
        self.grid = self.read_grid()
        self.kernel = self.read_kernel()
        self.initial = self.initial_field()
        self.flux = self.read_flux()
        if self.has('scheme'):
            self.read_scheme()
        if self.has('study'):
            self.read_study()
        if self.has('resolvent'):
            self.read_resolvent()
        self.read_verify()
        self.read_outputs()

    def read_grid(self) -> Grid:
        cells = self.get('grid', 'cells', lambda raw: tuple(int(i) for i in re.split(r'[,\s]+', raw) if i))
        dim = self.get('grid', 'dim', int, len(cells))
        if len(cells) == 1 and dim > 1:
            cells = cells * dim
        if len(cells) != dim:
            raise self.error('grid', 'cells', f"lists {len(cells)} axes for a {dim}D grid")
        extent = self.get_floats('grid', 'extent', (1.0,))
        origin = self.get_floats('grid', 'origin', (0.0,))
        if len(origin) == 1:
            origin = origin * dim
        try:
            return Grid.from_extent(cells, extent, origin)
        except ValueError as err:
            raise self.error('grid', 'cells', str(err)) from err

    def read_kernel(self):
        symmetry = self.get_choice('kernel', 'symmetry', SYMMETRY_CLASSES)
        if self.has('kernel', 'horizon_cells'):
            counts = self.get_floats('kernel', 'horizon_cells')
            if len(counts) == 1:
                counts = counts * self.grid.dim
            horizon = tuple(c * dx for c, dx in zip(counts, self.grid.spacing))
        else:
            horizon = self.get_floats('kernel', 'horizon')
        samples = self.get_floats('kernel', 'samples', None)
        partition = self.get('kernel', 'partition', lambda raw: tuple(
            tuple(int(axis) for axis in group.split(',') if axis.strip()) for group in raw.split('|')), None)
        return self.build_kernel(symmetry, horizon, self.get('kernel', 'profile', str, 'constant'), partition,
                                 samples)

    def build_kernel(self, symmetry, horizon, profile, partition=None, samples=None):
        key = 'horizon_cells' if self.has('kernel', 'horizon_cells') else 'horizon'
        try:
            spec = kernel_spec(symmetry, horizon, profile, partition, samples, dim=self.grid.dim)
            validate(spec, self.grid)
            build_stencils(spec, self.grid)
            return spec
        except KernelError as err:
            lineno = self.lines.get(('kernel', key))
            raise type(err)([f"line {lineno}: [kernel] {i}" for i in err.problems]) from err

    def initial_params(self) -> dict:
        params = dict()
        for key in ('u_left', 'u_right', 'x0', 'width', 'amplitude', 'base', 'value', 'low', 'high'):
            if self.has('initial', key):
                params[key] = self.get('initial', key, float)
        for key in ('center', 'lower', 'upper'):
            if self.has('initial', key):
                params[key] = list(self.get_floats('initial', key))
        return params

    def initial_field(self, seed=None):
        profile = self.get_choice('initial', 'profile', INITIAL_PROFILES)
        seed = self.seed if seed is None else seed
        if profile == 'random' and seed is None:
            raise self.error('initial', 'profile', "random initial data needs a seed")
        try:
            return initial_condition(self.grid, profile, seed, **self.initial_params())
        except ValueError as err:
            raise self.error('initial', 'profile', str(err)) from err

    def read_flux(self):
        name = self.get_choice('flux', 'name', tuple(BUILTIN_FLUXES))
        flux_range = self.get_floats('flux', 'range', None)
        if flux_range is None:
            flux_range = invariant_range(self.initial.values)
        elif len(flux_range) != 2 or flux_range[0] > flux_range[1]:
            raise self.error('flux', 'range', "needs two values m <= M")
        params = dict()
        if name in ('upwind_advection', 'lax_friedrichs_split') and self.has('flux', 'speed'):
            params['speed'] = self.positive('flux', 'speed')
        if name == 'lax_friedrichs_split':
            params['local'] = self.get('flux', 'local', str, 'burgers')
            params['alpha'] = self.get('flux', 'alpha', float, None)
        try:
            return make_flux(name, flux_range, **params)
        except ValueError as err:
            raise self.error('flux', 'name', str(err)) from err

    def operator(self, kernel=None, flux=None):
        return assemble(self.kernel if kernel is None else kernel, self.flux if flux is None else flux, self.grid)

    def read_scheme(self):
        self.scheme = self.get_choice('scheme', 'kind', SCHEMES, 'implicit')
        self.T = self.positive('scheme', 'T')
        if self.has('scheme', 'step'):
            self.step = self.positive('scheme', 'step')
        elif self.has('scheme', 'steps'):
            self.step = self.T / self.positive('scheme', 'steps', int)
        elif self.scheme == EXPLICIT:
            cfl = self.positive('scheme', 'cfl', float, 0.9)
            if cfl > 1:
                raise self.error('scheme', 'cfl', f"must not exceed 1, got {cfl}")
            self.step = cfl / cfl_constant(self.operator())
        else:
            raise self.error('scheme', 'step', "one of step or steps is required")
        self.solver = ResolventOptions(self.positive('scheme', 'tol_residual', float, None),
                                       self.positive('scheme', 'max_iters', int, 1000),
                                       self.get_choice('scheme', 'method', METHODS, 'auto'))
        self.forcing = None
        if self.scheme == FORCED:
            self.forcing = self.read_forcing()

    def read_forcing(self) -> ForcingSpec:
        kind = self.get_choice('scheme', 'forcing', FORCINGS, 'none')
        rate = self.get('scheme', 'forcing_rate', float, 1.0)
        volume = float(np.prod(self.grid.extent))
        if kind == 'decay':
            return ForcingSpec(lambda t, u: -rate * u.values, abs(rate), lambda t: abs(rate))
        if kind == 'constant':
            return ForcingSpec(lambda t, u: rate, 0.0, lambda t: abs(rate) * volume)
        return ForcingSpec(lambda t, u: 0.0, 0.0, lambda t: 0.0)

    def read_study(self):
        self.deltas_cells = self.get('study', 'deltas_cells', lambda raw: [int(i) for i in re.split(r'[,\s]+', raw)
                                                                          if i])
        if not self.deltas_cells or any(i < 1 for i in self.deltas_cells):
            raise self.error('study', 'deltas_cells', "needs positive integer horizons")
        self.oracle = self.get_choice('study', 'oracle', ORACLES)
        self.study_symmetry = self.get_choice('study', 'symmetry', SYMMETRY_CLASSES, ONE_SIDED)
        profile = self.get('initial', 'profile')
        if self.oracle == 'riemann' and profile != 'riemann':
            raise self.error('study', 'oracle', "the riemann oracle needs riemann initial data")
        if self.oracle == 'transport' and (profile != 'gaussian' or self.flux.local != 'advection'):
            raise self.error('study', 'oracle', "the transport oracle needs gaussian data and an advection flux")
        if self.grid.dim != 1:
            raise self.error('study', 'oracle', "the local-limit study is one-dimensional")

    def study_initial_spec(self) -> dict:
        spec = {'profile': self.get('initial', 'profile')}
        spec.update(self.initial_params())
        if spec['profile'] == 'gaussian' and 'center' in spec:
            spec['center'] = spec['center'][0]
        return spec

    def read_resolvent(self):
        self.lam = self.positive('resolvent', 'lambda')
        self.viscosity = self.get('resolvent', 'viscosity', float, 0.0)
        if self.viscosity < 0:
            raise self.error('resolvent', 'viscosity', f"must be nonnegative, got {self.viscosity}")

    def read_verify(self):
        self.compare_seed = self.get('verify', 'compare_seed', int, 1)
        self.n_space = self.positive('verify', 'n_space', int, 5)
        self.n_time = self.positive('verify', 'n_time', int, 5)
        self.c_samples = self.positive('verify', 'c_samples', int, 7)
        self.property_tol = self.positive('verify', 'tol', float, 1e-8)
        self.shift_radius = self.get('verify', 'shift_radius', int, None)

    def read_outputs(self):
        self.out_dir = self.get('outputs', 'directory', str, None)
        self.snapshot_every = self.positive('outputs', 'snapshot_every', int, 1)

    def settings(self) -> dict:
        """Resolved config echo for manifests"""
        echo = {section: dict(self.parser.items(section)) for section in self.parser.sections()}
        echo.setdefault('initial', dict())
        if self.seed is not None:
            echo['initial']['seed'] = str(self.seed)
        return echo
