import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsidyn.dynamics import DriveState, Simulator, deshelling_rates, mixed_ground, ms2_decay_rates, populations
from vsidyn.presets import RATES_NO_STRAIN, RATES_STRAIN, no_strain_model
from vsidyn.ratemodel import (
    E_HALF,
    G_HALF,
    G_THREE,
    N_POP,
    P_MS1,
    P_MS2,
    P_MS3,
    R_G_HALF,
    R_G_THREE,
    R_MS1,
    R_MS2,
    PopulationVector,
    ReducedParams,
    adiabatic_ms3,
    coherent_pump_rate,
    default_big_gamma,
    eq3_approx,
    full_rate_rhs,
    integrate,
    level_rate_rhs,
    pump_vector,
    reduced_params,
    reduced_rhs,
    steady_state,
)

R = RATES_NO_STRAIN
pops8 = st.lists(st.floats(0, 1), min_size=7, max_size=7).filter(lambda v: sum(v) > 1e-3)
omega = st.floats(0, 40)


def normalised(v):
    p = np.zeros(N_POP)
    p[:7] = v
    return p / p.sum()


def test_population_vector_validation():
    with pytest.raises(ValueError):
        PopulationVector(np.ones(8))
    with pytest.raises(ValueError):
        PopulationVector(np.r_[1.1, -0.1, np.zeros(6)])
    pv = PopulationVector.from_levels(np.diag(mixed_ground()).real)
    assert pv.p[G_HALF] == 0.5 and pv.p[G_THREE] == 0.5


@settings(max_examples=300, deadline=None)
@given(pops8, omega, omega)
def test_full_rhs_conserves(v, o1, o2):
    for rates in (R, RATES_STRAIN):
        assert abs(full_rate_rhs(normalised(v), rates, o1, o2).sum()) < 1e-10


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3), omega, omega)
def test_reduced_rhs_conserves(v, o1, o2):
    p = np.array(v) / sum(v)
    assert abs(reduced_rhs(p, reduced_params(R, o1, o2), R).sum()) < 1e-10


def test_ground_only_no_drive_is_stationary():
    p = np.zeros(N_POP)
    p[G_HALF], p[G_THREE] = 0.3, 0.7
    assert not full_rate_rhs(p, R, 0, 0).any()


def test_ms1_only_split_and_decay():
    p = np.zeros(N_POP)
    p[P_MS1] = 1.0
    d = full_rate_rhs(p, R, 0, 0)
    assert d[P_MS1] == pytest.approx(-(R.gamma_3 + R.gamma_4))
    assert d[G_HALF] == pytest.approx(R.gamma_3) and d[G_THREE] == pytest.approx(R.gamma_4)


def test_adiabatic_ms3_examples():
    assert adiabatic_ms3(1.0, R, 0, 0) == 0
    big = 100.0
    omega_sum = 0.1 * big / R.beta
    assert adiabatic_ms3(1.0, R, omega_sum, 0, big) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        adiabatic_ms3(1.0, R, 1, 0, 0.0)
    with pytest.warns(UserWarning):
        adiabatic_ms3(1.0, R, 2 * omega_sum, 0, big)


def test_adiabatic_ms3_matches_full_steady_state():
    o1 = o2 = 5.0
    big = 10 * R.beta * (o1 + o2)  # R / Gamma = 0.1
    ss = steady_state(lambda q: full_rate_rhs(q, R, o1, o2, big), N_POP)
    ratio = ss[P_MS3] / ss[P_MS2]
    assert ratio == pytest.approx(adiabatic_ms3(1.0, R, o1, o2, big), rel=0.05)


def test_reduced_params_examples():
    rp = reduced_params(R, 0, 0)
    assert rp.p_a1 == rp.p_a2 == rp.pp_a1 == rp.pp_a2 == rp.kappa == 0
    assert rp.gamma_3p_eff == R.gamma_3p0
    assert reduced_params(R, 4.33, 0).gamma_3p_eff == pytest.approx(deshelling_rates(R, 4.33, 0)[0], rel=1e-12)
    assert reduced_params(R, 4.33, 0).gamma_3p_eff == pytest.approx(0.1046, abs=5e-5)
    with pytest.raises(ValueError):
        ReducedParams(-1, 0, 0, 0, 0, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 40), st.floats(0, 40))
def test_kappa_positive(o1, o2):
    assert reduced_params(R, o1, o2).kappa > 0


def test_reduced_zero_drive_decays():
    rp = reduced_params(R, 0, 0)
    d = reduced_rhs(np.array([0.0, 1.0, 0.0, 0.0]), rp, R)
    assert d[R_MS1] == pytest.approx(-(R.gamma_3 + R.gamma_4))
    d = reduced_rhs(np.array([1.0, 0.0, 0.0, 0.0]), rp, R)
    assert d[R_MS2] == pytest.approx(-(R.gamma_3p0 + R.gamma_4p0))


def test_reduced_steady_state_matches_full():
    o1 = o2 = 0.1 * min(R.big_gamma_1, R.big_gamma_2)
    full = steady_state(lambda q: full_rate_rhs(q, R, o1, o2), N_POP)
    red = steady_state(lambda q: reduced_rhs(q, reduced_params(R, o1, o2), R), 4)
    # the reduced system drops excited and MS3 populations; compare renormalised
    folded = np.array([full[P_MS2], full[P_MS1], full[G_THREE], full[G_HALF]])
    folded /= folded.sum()
    assert np.all(np.abs(red / folded - 1) < 0.05)


def test_eq3_examples():
    assert eq3_approx(R, 0.0) == R.gamma_3p0
    assert eq3_approx(R, 4.33) == pytest.approx(0.1358 * 4.33 * 60.72 / 166.39, rel=1e-12)
    assert eq3_approx(R, 4.33) == pytest.approx(0.2146, abs=5e-5)
    with pytest.raises(ValueError):
        eq3_approx(R, -1.0)


def test_eq3_ratio_to_full_law():
    rates = R.replace(gamma_3p0=0.0)
    for om in np.linspace(0.5, 30, 12):
        ratio = eq3_approx(rates, om) / deshelling_rates(rates, om, 0.0)[0]
        assert ratio == pytest.approx(2 * (om + rates.big_gamma_1) / rates.big_gamma_1, rel=1e-12)


def test_level_equations_match_incoherent_lindblad():
    cfg = no_strain_model()
    sim = Simulator(cfg)
    drive = DriveState(incoherent_a1=3.0, offres_pump=0.5)
    times = np.linspace(0, 20, 101)
    lind = np.array([populations(sim.to_rho(v)) for v in sim.evolve_many(sim.to_vec(mixed_ground()), drive, times)])
    g3, g4 = ms2_decay_rates(cfg.rates, drive)
    rate = integrate(lambda q: level_rate_rhs(q, cfg.rates, pump_vector(3.0, 0, 0.5), g3, g4), np.diag(mixed_ground()).real, times)
    assert np.abs(lind - rate).max() < 1e-6


def test_pair_rates_match_incoherent_lindblad_without_deshelling():
    cfg = no_strain_model().with_rates(beta=0.0)
    sim = Simulator(cfg)
    times = np.linspace(0, 40, 201)
    states = sim.evolve_many(sim.to_vec(mixed_ground()), DriveState(incoherent_a1=3.0, incoherent_a2=1.0), times)
    lind = np.array([PopulationVector.from_levels(populations(sim.to_rho(v))).p for v in states])
    p0 = PopulationVector.from_levels(np.diag(mixed_ground()).real).p
    rate = integrate(lambda q: full_rate_rhs(q, cfg.rates, 3.0, 1.0), p0, times)
    assert np.abs(lind - rate).max() < 1e-6


@pytest.mark.parametrize("rabi", [1.0, 4.33, 16.6])
def test_coherent_drive_within_five_percent(rabi):
    cfg = no_strain_model()
    sim = Simulator(cfg)
    times = np.linspace(0, 40, 201)
    states = sim.evolve_many(sim.to_vec(mixed_ground()), DriveState.resonant("A1", rabi), times)
    lind = np.array([PopulationVector.from_levels(populations(sim.to_rho(v))).p for v in states])
    p0 = PopulationVector.from_levels(np.diag(mixed_ground()).real).p
    w = coherent_pump_rate(rabi, R.big_gamma_1)
    rate = integrate(lambda q: full_rate_rhs(q, R, w, 0.0, deshelling_drive=(rabi, 0.0)), p0, times)
    assert np.abs(lind - rate).max() < 0.05


def test_identity_mapping_misses_weak_drive():
    # the literal Omega -> rate identity overshoots pumping by ~ Gamma/(4 pi^2 Omega)
    cfg = no_strain_model()
    sim = Simulator(cfg)
    times = np.linspace(0, 40, 201)
    states = sim.evolve_many(sim.to_vec(mixed_ground()), DriveState.resonant("A1", 1.0), times)
    lind = np.array([PopulationVector.from_levels(populations(sim.to_rho(v))).p for v in states])
    p0 = PopulationVector.from_levels(np.diag(mixed_ground()).real).p
    rate = integrate(lambda q: full_rate_rhs(q, R, 1.0, 0.0), p0, times)
    assert np.abs(lind - rate).max() > 0.05


def test_coherent_pump_rate():
    assert coherent_pump_rate(1.0, 2 * np.pi) == pytest.approx(2 * np.pi)
    with pytest.raises(ValueError):
        coherent_pump_rate(1.0, 0.0)


def test_default_big_gamma():
    assert default_big_gamma(R) == pytest.approx(100 * R.big_gamma_1)
