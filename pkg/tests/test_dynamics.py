import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsidyn.dynamics import (
    DARK,
    E,
    G,
    MS1,
    MS2,
    DriveState,
    PropagationError,
    RateSet,
    Simulator,
    basis_state,
    check_density_matrix,
    deshelling_rates,
    lindblad_rhs,
    liouvillian,
    mixed_ground,
    ms2_decay_rates,
    pl_rate,
    populations,
    propagate,
)
from vsidyn.presets import PUMP_50UW, RATES_NO_STRAIN, RATES_STRAIN, no_strain_model, strain_model
from vsidyn.ratemodel import integrate, level_rate_rhs, pump_vector

CFG = no_strain_model()


def random_rho(rng, n=10):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_rateset_validation():
    with pytest.raises(ValueError):
        RATES_NO_STRAIN.replace(gamma_r=-1.0)
    with pytest.raises(ValueError):
        RATES_NO_STRAIN.replace(beta=1.5)
    assert RATES_NO_STRAIN.big_gamma_1 == pytest.approx(166.39)
    assert RATES_NO_STRAIN.big_gamma_2 == pytest.approx(90.42)


def test_drive_validation():
    with pytest.raises(ValueError):
        DriveState(resonant_rabi_a1=-1.0)
    with pytest.raises(ValueError):
        DriveState(offres_pump=np.inf)
    assert DARK.is_dark and not DriveState(incoherent_a2=1.0).is_dark


def test_excited_population_decay_rate():
    d = lindblad_rhs(basis_state(5), CFG, DARK)
    assert d[5, 5].real == pytest.approx(-166.39, abs=1e-10)


def test_mixed_ground_stationary():
    assert np.abs(lindblad_rhs(mixed_ground(), CFG, DARK)).max() < 1e-12


def test_trace_preserved_for_random_states():
    rng = np.random.default_rng(0)
    drive = DriveState(3.0, 2.0, 0.5, -0.5, 0.7)
    for cfg in (CFG, strain_model()):
        for _ in range(1000 if cfg is CFG else 100):
            assert abs(np.trace(lindblad_rhs(random_rho(rng), cfg, drive))) < 1e-9


def test_deshelling_limits_and_value():
    assert deshelling_rates(RATES_NO_STRAIN, 0, 0) == (RATES_NO_STRAIN.gamma_3p0, RATES_NO_STRAIN.gamma_4p0)
    g3, _ = deshelling_rates(RATES_NO_STRAIN, 4.33, 0.0)
    assert g3 == pytest.approx(0.1358 * 2.165 * (4.33 + 56.39) / (4.33 + 166.39), rel=1e-12)
    assert g3 == pytest.approx(0.1046, abs=5e-5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.001, 5))
def test_deshelling_monotone(o1, o2, step):
    for rates in (RATES_NO_STRAIN, RATES_STRAIN):
        a3, a4 = deshelling_rates(rates, o1, o2)
        b3, b4 = deshelling_rates(rates, o1 + step, o2)
        c3, c4 = deshelling_rates(rates, o1, o2 + step)
        assert min(a3, a4) >= 0
        assert b3 >= a3 and b4 >= a4 and c3 >= a3 and c4 >= a4


def test_offres_override_keeps_resonant_part():
    base = DriveState(resonant_rabi_a1=4.0, offres_pump=0.6, offres_gamma_3p=0.2, offres_gamma_4p=0.3)
    g3, g4 = ms2_decay_rates(RATES_NO_STRAIN, base)
    r3, r4 = deshelling_rates(RATES_NO_STRAIN, 4.0, 0.0)
    assert g3 == pytest.approx(r3 - RATES_NO_STRAIN.gamma_3p0 + 0.2)
    assert g4 == pytest.approx(r4 - RATES_NO_STRAIN.gamma_4p0 + 0.3)
    assert ms2_decay_rates(RATES_NO_STRAIN, DriveState(offres_pump=0.6, offres_gamma_3p=0.18, offres_gamma_4p=0.26)) == pytest.approx((0.18, 0.26))


def test_propagate_zero_duration():
    rho = mixed_ground()
    assert np.array_equal(propagate(rho, CFG, DARK, 0.0), rho)
    with pytest.raises(ValueError):
        propagate(rho, CFG, DARK, -1.0)


def test_excited_lifetime_one_over_e():
    rho = propagate(basis_state(5), CFG, DARK, 1 / 166.39)
    assert rho[5, 5].real == pytest.approx(np.exp(-1), rel=1e-10)
    assert rho[5, 5].real == pytest.approx(np.exp(-1), rel=0.01)


@pytest.mark.parametrize("cfg,tau", [(no_strain_model(), 1 / 4.05), (strain_model(), 1 / 1.20)])
def test_metastable_decay_constant(cfg, tau):
    rho = propagate(basis_state(MS1), cfg, DARK, tau)
    assert rho[MS1, MS1].real == pytest.approx(np.exp(-1), rel=1e-10)


def test_rk4_matches_expm():
    drive = DriveState(4.33, 0.0, 0.0, 0.0, 0.6)
    rho0 = mixed_ground()
    a = propagate(rho0, CFG, drive, 0.2)
    b = propagate(rho0, CFG, drive, 0.2, method="rk4")
    assert np.abs(a - b).max() < 1e-8


def test_rk4_step_underflow():
    with pytest.raises(PropagationError):
        propagate(mixed_ground(), CFG, DARK, 1.0, dt_max=1e-12, method="rk4")


def test_pl_rate_examples():
    assert pl_rate(mixed_ground(), CFG) == 0
    full = np.zeros((10, 10), dtype=complex)
    full[4:8, 4:8] = np.eye(4) / 4
    assert pl_rate(full, CFG) == pytest.approx(56.39)
    dark = no_strain_model(dark_rate=7.0)
    assert pl_rate(mixed_ground(), dark) == pytest.approx(7e-6)


def test_canonical_sequence_keeps_valid_density_matrix():
    sim = Simulator(strain_model())
    vec = sim.to_vec(mixed_ground())
    for drive, t in [(PUMP_50UW["strain"], 20.0), (DriveState.resonant("A1", 4.33), 40.0), (DARK, 2.0), (DriveState(3.0, 2.0, 1.0, -1.0, 0.3), 5.0)]:
        for v in sim.evolve_many(vec, drive, np.linspace(0, t, 30)):
            check_density_matrix(sim.to_rho(v), herm_tol=1e-9, trace_tol=1e-7, pos_tol=1e-7)
        vec = sim.evolve(vec, drive, t)


def test_undriven_unstrained_matches_classical_rates():
    rng = np.random.default_rng(1)
    p0 = rng.dirichlet(np.ones(10))
    rho0 = np.diag(p0).astype(complex)
    times = np.linspace(0, 3, 31)
    sim = Simulator(CFG)
    lind = np.array([populations(sim.to_rho(v)) for v in sim.evolve_many(sim.to_vec(rho0), DARK, times)])
    g3, g4 = ms2_decay_rates(CFG.rates, DARK)
    rate = integrate(lambda q: level_rate_rhs(q, CFG.rates, pump_vector(0, 0), g3, g4), p0, times)
    assert np.abs(lind - rate).max() < 1e-6


def test_offres_pump_conserves_pair_population_without_isc():
    rates = RateSet(56.39, 0, 0, 0, 0, 0, 0, 0, 0, 0)
    from dataclasses import replace

    cfg = replace(CFG, rates=rates)
    rng = np.random.default_rng(2)
    p0 = np.zeros(10)
    p0[:8] = rng.dirichlet(np.ones(8))
    rho = propagate(np.diag(p0).astype(complex), cfg, DriveState(offres_pump=5.0), 1.0)
    pops = populations(rho)
    for k in range(4):
        assert pops[G[k]] + pops[E[k]] == pytest.approx(p0[G[k]] + p0[E[k]], abs=1e-12)


def test_liouvillian_shape_and_sim_cache():
    assert liouvillian(CFG, DARK).shape == (100, 100)
    sim = Simulator(CFG)
    assert sim.step_matrix(DARK, 0.1) is sim.step_matrix(DARK, 0.1)


def test_check_density_matrix_rejects():
    with pytest.raises(ValueError):
        check_density_matrix(np.eye(10))
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([1.5, -0.5] + [0] * 8))
