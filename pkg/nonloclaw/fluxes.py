"""
Two-point monotone pair-interaction fluxes phi(a, b), their consistent local fluxes psi, Lipschitz data
certified on a validity range, and the Kruzkov-type entropy flux q~(a, b, c).
"""
from dataclasses import dataclass, field, replace
from typing import Callable
import logging

import numpy as np

from nonloclaw.utils import NonFiniteError, FluxConsistencyError, sign0

LOGGER = logging.getLogger("nonloclaw.fluxes")

MONOTONE_TOL = 1e-12
TILDE_TOL = 1e-12
RANGE_PAD = 0.1


def _burgers(u):
    return 0.5 * np.asarray(u, dtype=float) ** 2


def _burgers_prime(u):
    return np.asarray(u, dtype=float)


LOCAL_FLUXES = {
    'burgers': (lambda c: _burgers, lambda c: _burgers_prime),
    'advection': (lambda c: (lambda u: c * np.asarray(u, dtype=float)),
                  lambda c: (lambda u: np.full_like(np.asarray(u, dtype=float), c))),
}


@dataclass(frozen=True)
class FluxPair:
    name: str
    phi: Callable = field(compare=False)
    psi: Callable = field(compare=False)
    dphi_da: Callable = field(compare=False)
    dphi_db: Callable = field(compare=False)
    K1: float
    K2: float
    range: tuple
    wave_speed: float
    local: str = 'custom'
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m, M = (float(i) for i in self.range)
        if not m <= M:
            raise ValueError(f"Flux range must satisfy m <= M, got {self.range}")
        object.__setattr__(self, 'range', (m, M))

    @property
    def lipschitz(self) -> float:
        return self.K1 + self.K2


def _sup_abs(function, flux_range, samples=257):
    return float(np.max(np.abs(function(np.linspace(*flux_range, samples)))))


def upwind_advection(flux_range=(-1.0, 1.0), speed=1.0):
    speed = float(speed)
    if not speed > 0:
        raise ValueError(f"upwind_advection needs a positive speed, got {speed}")
    return FluxPair(
        name='upwind_advection',
        phi=lambda a, b: speed * np.asarray(a, dtype=float) + 0.0 * np.asarray(b, dtype=float),
        psi=lambda a: speed * np.asarray(a, dtype=float),
        dphi_da=lambda a, b: np.full(np.broadcast(a, b).shape, speed),
        dphi_db=lambda a, b: np.zeros(np.broadcast(a, b).shape),
        K1=speed, K2=0.0, range=flux_range, wave_speed=speed, local='advection', params={'speed': speed})


def engquist_osher_burgers(flux_range=(-1.0, 1.0)):
    bound = max(abs(flux_range[0]), abs(flux_range[1]))
    return FluxPair(
        name='engquist_osher_burgers',
        phi=lambda a, b: 0.5 * np.maximum(a, 0.0) ** 2 + 0.5 * np.minimum(b, 0.0) ** 2,
        psi=_burgers,
        dphi_da=lambda a, b: np.maximum(a, 0.0) + 0.0 * np.asarray(b, dtype=float),
        dphi_db=lambda a, b: np.minimum(b, 0.0) + 0.0 * np.asarray(a, dtype=float),
        K1=bound, K2=bound, range=flux_range, wave_speed=bound, local='burgers')


def _godunov_burgers_phi(a, b):
    return np.maximum(_burgers(np.maximum(a, 0.0)), _burgers(np.minimum(b, 0.0)))


def godunov_burgers(flux_range=(-1.0, 1.0)):
    bound = max(abs(flux_range[0]), abs(flux_range[1]))

    def left_wins(a, b):
        return _burgers(np.maximum(a, 0.0)) >= _burgers(np.minimum(b, 0.0))

    return FluxPair(
        name='godunov_burgers',
        phi=_godunov_burgers_phi,
        psi=_burgers,
        dphi_da=lambda a, b: np.where(left_wins(a, b), np.maximum(a, 0.0), 0.0),
        dphi_db=lambda a, b: np.where(left_wins(a, b), 0.0, np.minimum(b, 0.0)),
        K1=bound, K2=bound, range=flux_range, wave_speed=bound, local='burgers')


def lax_friedrichs_split(flux_range=(-1.0, 1.0), local='burgers', alpha=None, speed=1.0):
    if local not in LOCAL_FLUXES:
        raise ValueError(f"Unknown local flux '{local}', choose one of {', '.join(LOCAL_FLUXES)}")
    psi, dpsi = (i(float(speed)) for i in LOCAL_FLUXES[local])
    wave_speed = _sup_abs(dpsi, flux_range)
    params = {'local': local, 'alpha': alpha, 'speed': float(speed)}
    alpha = wave_speed if alpha is None else float(alpha)
    return FluxPair(
        name='lax_friedrichs_split',
        phi=lambda a, b: 0.5 * (psi(a) + psi(b)) + 0.5 * alpha * (np.asarray(a, dtype=float) - b),
        psi=psi,
        dphi_da=lambda a, b: 0.5 * (dpsi(a) + alpha) + 0.0 * np.asarray(b, dtype=float),
        dphi_db=lambda a, b: 0.5 * (dpsi(b) - alpha) + 0.0 * np.asarray(a, dtype=float),
        K1=0.5 * (wave_speed + abs(alpha)), K2=0.5 * (wave_speed + abs(alpha)), range=flux_range,
        wave_speed=wave_speed, local=local, params=params)


def zero_flux(flux_range=(-1.0, 1.0)):
    def zeros(a, b):
        return np.zeros(np.broadcast(a, b).shape)
    return FluxPair(name='zero', phi=zeros, psi=lambda a: np.zeros(np.shape(a)), dphi_da=zeros,
                    dphi_db=zeros, K1=0.0, K2=0.0, range=flux_range, wave_speed=0.0, local='zero')


def from_callables(name, phi, flux_range=(-1.0, 1.0), psi=None, dphi_da=None, dphi_db=None, K1=None, K2=None,
                   samples=65):
    """Wrap user callables; missing derivatives use central differences and missing K's are sampled"""
    step = 1e-7 * max(1.0, abs(flux_range[0]), abs(flux_range[1]))
    if psi is None:
        psi = lambda a: phi(a, a)
    if dphi_da is None:
        dphi_da = lambda a, b: (phi(np.asarray(a) + step, b) - phi(np.asarray(a) - step, b)) / (2 * step)
    if dphi_db is None:
        dphi_db = lambda a, b: (phi(a, np.asarray(b) + step) - phi(a, np.asarray(b) - step)) / (2 * step)
    lattice = np.linspace(*flux_range, samples)
    a, b = np.meshgrid(lattice, lattice, indexing='ij')
    if K1 is None:
        K1 = float(np.max(np.abs(dphi_da(a, b))))
    if K2 is None:
        K2 = float(np.max(np.abs(dphi_db(a, b))))
    wave_speed = _sup_abs(lambda u: (psi(np.asarray(u) + step) - psi(np.asarray(u) - step)) / (2 * step),
                          flux_range)
    return FluxPair(name=name, phi=phi, psi=psi, dphi_da=dphi_da, dphi_db=dphi_db, K1=K1, K2=K2,
                    range=flux_range, wave_speed=wave_speed)


BUILTIN_FLUXES = {
    'upwind_advection': upwind_advection,
    'engquist_osher_burgers': engquist_osher_burgers,
    'godunov_burgers': godunov_burgers,
    'lax_friedrichs_split': lax_friedrichs_split,
    'zero': zero_flux,
}


def make_flux(name: str, flux_range=(-1.0, 1.0), **params) -> FluxPair:
    if name not in BUILTIN_FLUXES:
        raise ValueError(f"Unknown flux '{name}', choose one of {', '.join(BUILTIN_FLUXES)}")
    return BUILTIN_FLUXES[name](flux_range, **params)


def with_range(flux: FluxPair, m: float, M: float) -> FluxPair:
    """Recertify a flux on [m, M]; builtins recompute their Lipschitz data"""
    if flux.name in BUILTIN_FLUXES:
        return make_flux(flux.name, (m, M), **{k: v for k, v in flux.params.items()
                                               if k in ('speed', 'local', 'alpha')})
    return replace(flux, range=(m, M))


def invariant_range(u0_values, pad=RANGE_PAD):
    """[-|u0^-|_inf, |u0^+|_inf] padded on both sides by `pad` of its width"""
    values = np.asarray(u0_values, dtype=float)
    low = -float(np.max(np.maximum(-values, 0.0)))
    high = float(np.max(np.maximum(values, 0.0)))
    margin = pad * (high - low) if high > low else pad
    return low - margin, high + margin


def max_wave_speed(flux: FluxPair) -> float:
    return flux.wave_speed


def in_range(flux: FluxPair, values) -> bool:
    m, M = flux.range
    values = np.asarray(values)
    return bool(np.all(values >= m) and np.all(values <= M))


def eval_phi(flux: FluxPair, a, b, logger=LOGGER):
    if not (in_range(flux, a) and in_range(flux, b)):
        logger.warning(f"Flux {flux.name} evaluated outside its certified range {flux.range}")
    value = flux.phi(a, b)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"Flux {flux.name} is not finite at a={a!r}, b={b!r}")
    return value if np.ndim(value) else float(value)


@dataclass
class AuditReport:
    """Outcome of a sampled inequality sweep; margins are >= 0 when the inequality holds"""
    name: str
    passed: bool
    worst_margin: float
    location: tuple
    checked: int
    margins: dict = field(default_factory=dict)


def _lattice(flux: FluxPair, samples: int):
    if samples < 2:
        raise ValueError("At least two samples per axis are required")
    return np.linspace(flux.range[0], flux.range[1], samples)


def check_monotone(flux: FluxPair, samples: int = 21) -> AuditReport:
    lattice = _lattice(flux, samples)
    a, b = np.meshgrid(lattice, lattice, indexing='ij')
    values = flux.phi(a, b)
    up_in_a = values[1:, :] - values[:-1, :]
    down_in_b = values[:, :-1] - values[:, 1:]
    margins = {'increasing_in_a': float(np.min(up_in_a)), 'decreasing_in_b': float(np.min(down_in_b))}
    if margins['increasing_in_a'] <= margins['decreasing_in_b']:
        k = np.unravel_index(np.argmin(up_in_a), up_in_a.shape)
        location = (float(a[k]), float(b[k]))
    else:
        k = np.unravel_index(np.argmin(down_in_b), down_in_b.shape)
        location = (float(a[k]), float(b[k]))
    worst = min(margins.values())
    return AuditReport('monotone', worst >= -MONOTONE_TOL, worst, location, values.size, margins)


def check_lipschitz(flux: FluxPair, samples: int = 41) -> AuditReport:
    """Sampled difference quotients in a and in b must stay below K1 and K2"""
    lattice = _lattice(flux, samples)
    h = lattice[1] - lattice[0]
    a, b = np.meshgrid(lattice, lattice, indexing='ij')
    values = flux.phi(a, b)
    q_a = float(np.max(np.abs(values[1:, :] - values[:-1, :]))) / h if h > 0 else 0.0
    q_b = float(np.max(np.abs(values[:, 1:] - values[:, :-1]))) / h if h > 0 else 0.0
    margins = {'K1': flux.K1 - q_a, 'K2': flux.K2 - q_b}
    worst = min(margins.values())
    tol = MONOTONE_TOL * (1 + flux.K1 + flux.K2) + 1e-9 * max(q_a, q_b)
    return AuditReport('lipschitz', worst >= -tol, worst, (), values.size, margins)


def entropy_flux_tilde(flux: FluxPair, a, b, c):
    """q~(a, b, c) = phi(a v c, b v c) - phi(a ^ c, b ^ c), cross-checked against its sign decomposition"""
    a, b, c = (np.asarray(i, dtype=float) for i in (a, b, c))
    by_extrema = flux.phi(np.maximum(a, c), np.maximum(b, c)) - flux.phi(np.minimum(a, c), np.minimum(b, c))
    sa, sb = sign0(a - c), sign0(b - c)
    by_signs = 0.5 * (sa + sb) * (flux.phi(a, b) - flux.phi(c, c)) + \
        0.5 * (sa - sb) * (flux.phi(a, c) - flux.phi(c, b))
    scale = 1.0 + np.abs(flux.phi(a, b)) + np.abs(flux.phi(c, c)) + np.abs(flux.phi(a, c)) + \
        np.abs(flux.phi(c, b))
    if np.any(np.abs(by_extrema - by_signs) > TILDE_TOL * scale):
        raise FluxConsistencyError(f"The two forms of the entropy flux of {flux.name} disagree: "
                                   f"max deviation {float(np.max(np.abs(by_extrema - by_signs)))!r}")
    return by_extrema if by_extrema.ndim else float(by_extrema)


def flux_inequality_audit(flux: FluxPair, samples: int = 21) -> AuditReport:
    """Sweep (a, b, c) checking

    sign0(b - c) [phi(a, b) - phi(c, c)] <= q~(a, b, c),
    -sign0(a - c) [phi(a, b) - phi(c, c)] <= -q~(a, b, c),
    [sign0(b - c) - sign0(a - c)] [phi(a, b) - phi(c, c)] <= 0.
    """
    lattice = _lattice(flux, samples)
    a, b, c = np.meshgrid(lattice, lattice, lattice, indexing='ij')
    jump = flux.phi(a, b) - flux.phi(c, c)
    tilde = flux.phi(np.maximum(a, c), np.maximum(b, c)) - flux.phi(np.minimum(a, c), np.minimum(b, c))
    sa, sb = sign0(a - c), sign0(b - c)
    slacks = {
        'upper': tilde - sb * jump,
        'lower': -tilde + sa * jump,
        'combined': -(sb - sa) * jump,
    }
    margins = {key: float(np.min(value)) for key, value in slacks.items()}
    worst_key = min(margins, key=margins.get)
    k = np.unravel_index(np.argmin(slacks[worst_key]), a.shape)
    location = (float(a[k]), float(b[k]), float(c[k]))
    worst = margins[worst_key]
    return AuditReport('flux_inequalities', worst >= -MONOTONE_TOL, worst, location, a.size, margins)
