import pytest

import logging

import numpy as np

from nonloclaw.fluxes import FluxPair, BUILTIN_FLUXES, make_flux, upwind_advection, engquist_osher_burgers, \
    godunov_burgers, lax_friedrichs_split, from_callables, with_range, invariant_range, in_range, eval_phi, \
    check_monotone, check_lipschitz, entropy_flux_tilde, flux_inequality_audit
from nonloclaw.utils import FluxConsistencyError


def downwind(a, b):
    return np.asarray(b, dtype=float) + 0.0 * np.asarray(a, dtype=float)


@pytest.mark.parametrize('name', sorted(BUILTIN_FLUXES))
def test_builtin_fluxes_pass_audits(name):
    flux = make_flux(name)
    assert check_monotone(flux).passed
    assert check_lipschitz(flux).passed
    audit = flux_inequality_audit(flux)
    assert audit.passed
    assert audit.checked == 21 ** 3


@pytest.mark.parametrize('name', sorted(BUILTIN_FLUXES))
def test_builtin_fluxes_are_consistent(name):
    flux = make_flux(name)
    u = np.linspace(-1, 1, 17)
    assert np.allclose(flux.phi(u, u), flux.psi(u))


def test_engquist_osher_and_godunov():
    eo = engquist_osher_burgers()
    assert eval_phi(eo, 1.0, -1.0) == 1.0
    assert eval_phi(eo, -1.0, 1.0) == 0.0
    godunov = godunov_burgers()
    assert eval_phi(godunov, 1.0, -1.0) == 0.5
    assert eval_phi(godunov, -0.5, -0.5) == pytest.approx(0.125)
    assert eo.K1 == eo.K2 == 1.0


def test_lax_friedrichs_split():
    flux = lax_friedrichs_split()
    assert flux.wave_speed == pytest.approx(1.0)
    assert flux.lipschitz == pytest.approx(2.0)
    advection = lax_friedrichs_split(local='advection', speed=2.0)
    assert advection.wave_speed == pytest.approx(2.0)
    with pytest.raises(ValueError):
        lax_friedrichs_split(local='traffic')


def test_downwind_flux_fails_audits():
    flux = from_callables('downwind', downwind)
    monotone = check_monotone(flux)
    assert not monotone.passed
    assert monotone.margins['decreasing_in_b'] < 0
    audit = flux_inequality_audit(flux)
    assert not audit.passed
    assert audit.worst_margin < 0


def test_from_callables_estimates_constants():
    flux = from_callables('scaled', lambda a, b: 2.0 * np.asarray(a, dtype=float) - 0.5 * np.asarray(b, dtype=float))
    assert flux.K1 == pytest.approx(2.0, rel=1e-5)
    assert flux.K2 == pytest.approx(0.5, rel=1e-5)
    assert flux.wave_speed == pytest.approx(1.5, rel=1e-5)


def test_check_lipschitz_catches_small_constants():
    flux = from_callables('understated', lambda a, b: np.asarray(a, dtype=float) + 0.0 * np.asarray(b), K1=0.1)
    report = check_lipschitz(flux)
    assert not report.passed
    assert report.margins['K1'] == pytest.approx(-0.9)


def test_entropy_flux_tilde():
    flux = upwind_advection(speed=2.0)
    assert entropy_flux_tilde(flux, 0.5, -0.5, 0.0) == pytest.approx(1.0)
    assert entropy_flux_tilde(flux, 0.5, -0.5, 1.0) == pytest.approx(1.0)
    eo = engquist_osher_burgers()
    a, b, c = np.meshgrid(*[np.linspace(-1, 1, 9)] * 3, indexing='ij')
    values = entropy_flux_tilde(eo, a, b, c)
    # equal arguments leave nothing to dissipate
    assert np.allclose(entropy_flux_tilde(eo, c, c, c), 0.0)
    assert values.shape == (9, 9, 9)


def test_with_range():
    flux = with_range(engquist_osher_burgers(), -2.0, 2.0)
    assert flux.range == (-2.0, 2.0)
    assert flux.K1 == 2.0
    advection = with_range(upwind_advection(speed=3.0), 0.0, 1.0)
    assert advection.K1 == 3.0
    custom = with_range(from_callables('downwind', downwind), 0.0, 0.5)
    assert custom.range == (0.0, 0.5)
    with pytest.raises(ValueError):
        upwind_advection((1.0, -1.0))


def test_invariant_range():
    assert invariant_range([0.0, 1.0]) == pytest.approx((-0.1, 1.1))
    assert invariant_range([-1.0, 1.0]) == pytest.approx((-1.2, 1.2))
    assert invariant_range([0.0, 0.0]) == pytest.approx((-0.1, 0.1))


def test_eval_phi_warns_outside_range(caplog):
    flux = engquist_osher_burgers()
    assert in_range(flux, [0.0, 1.0])
    assert not in_range(flux, [0.0, 1.5])
    with caplog.at_level(logging.WARNING):
        eval_phi(flux, 1.5, 0.0)
    assert 'outside its certified range' in caplog.text


def test_make_flux_unknown():
    with pytest.raises(ValueError):
        make_flux('roe')


def test_lax_friedrichs_without_viscosity_is_not_monotone():
    report = check_monotone(lax_friedrichs_split(alpha=0.0))
    assert not report.passed
    assert report.margins['increasing_in_a'] < -0.04
    assert report.location[0] < 0


@pytest.mark.parametrize('name', sorted(BUILTIN_FLUXES))
def test_entropy_flux_on_the_diagonal(name):
    flux = make_flux(name)
    a, c = np.meshgrid(np.linspace(-1, 1, 11), np.linspace(-1, 1, 11), indexing='ij')
    expected = np.sign(a - c) * (flux.psi(a) - flux.psi(c))
    assert np.allclose(entropy_flux_tilde(flux, a, a, c), expected, atol=1e-14)


def test_engquist_osher_entropy_flux_cancels():
    assert entropy_flux_tilde(engquist_osher_burgers(), 1.0, -1.0, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_entropy_flux_cross_check_catches_unstable_evaluations():
    rng = np.random.default_rng(0)

    def jittery(a, b):
        shape = np.broadcast(a, b).shape
        return np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + 1e-3 * rng.uniform(size=shape)

    flux = FluxPair('jittery', jittery, lambda a: np.zeros(np.shape(a)), jittery, jittery, 1.0, 1.0, (-1.0, 1.0), 1.0)
    with pytest.raises(FluxConsistencyError):
        entropy_flux_tilde(flux, np.linspace(-1, 1, 9), np.linspace(1, -1, 9), 0.0)
