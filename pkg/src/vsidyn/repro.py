"""Reference reproduction checks, shared by ``vsidyn paper-repro`` and the test suite.

Each check returns a :class:`CheckResult`; none of them raise on a miss.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .dynamics import DriveState, Simulator, mixed_ground, populations
from .estimate import ABCConfig, FitProblem, abc_errors, deshelling_law_fit, rate_fit
from .lineshape import PhononData, overlap_function, poisson_comb, synthetic_modes
from .presets import (
    DARK_COUNTS_HZ,
    PUMP_50UW,
    PUMP_815UW,
    RATES_NO_STRAIN,
    RATES_STRAIN,
    VISIBILITY_EFFICIENCY,
    no_strain_model,
    strain_model,
)
from .ratemodel import PopulationVector, coherent_pump_rate, full_rate_rhs, integrate
from .sequences import (
    LifetimeExp,
    MetastableDecayExp,
    RepolarizationExp,
    SpinDepletionExp,
    Trace,
    VisibilityExp,
    contrast,
    default_recovery_delays,
    emission_change_map,
    fit_recovery,
    lifetime_experiment,
    metastable_decay_experiment,
    repolarization_experiment,
    visibility_experiment,
)
from .spincore import Transition, build_spin_operators, general_strain_matrix, odmr_frequency, strain_hamiltonian


@dataclass
class CheckResult:
    key: int
    name: str
    passed: bool
    value: dict
    detail: str
    runtime: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.key:>2} {self.name}: {self.detail} ({self.runtime:.2f} s)"

    def as_dict(self) -> dict:
        return {
            "key": self.key,
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "detail": self.detail,
            "runtime": self.runtime,
        }


def _within(value: float, target: float, rel: float) -> bool:
    return abs(value / target - 1) <= rel


def check_lifetimes() -> CheckResult:
    cfg = no_strain_model()
    sim = Simulator(cfg)
    t0 = time.perf_counter()
    _, tau_a1 = lifetime_experiment(cfg, "A1", sim=sim)
    _, tau_a2 = lifetime_experiment(cfg, "A2", sim=sim)
    runtime = time.perf_counter() - t0
    ok = _within(tau_a1, 6.01, 0.02) and _within(tau_a2, 11.06, 0.02) and runtime < 1.0
    return CheckResult(
        1, "excited-state lifetimes", ok, {"tau_a1_ns": tau_a1, "tau_a2_ns": tau_a2},
        f"tau_A1 = {tau_a1:.3f} ns (6.01 +- 2%), tau_A2 = {tau_a2:.3f} ns (11.06 +- 2%)", runtime,
    )


def _recovery_tau(cfg, pump) -> float:
    delays = default_recovery_delays(cfg)
    out = metastable_decay_experiment(cfg, pump, delays)
    summed = out[Transition.A1].pl + out[Transition.A2].pl
    return fit_recovery(delays, summed)["tau_fast"]


def check_metastable() -> CheckResult:
    t0 = time.perf_counter()
    tau_ns = _recovery_tau(no_strain_model(), PUMP_815UW["no_strain"]) * 1e3
    tau_s = _recovery_tau(strain_model(), PUMP_815UW["strain"]) * 1e3
    runtime = time.perf_counter() - t0
    ok = _within(tau_ns, 247, 0.02) and _within(tau_s, 833, 0.02) and runtime < 10
    return CheckResult(
        2, "metastable lifetimes", ok, {"tau_no_strain_ns": tau_ns, "tau_strain_ns": tau_s},
        f"{tau_ns:.1f} ns (247 +- 2%), {tau_s:.1f} ns strained (833 +- 2%)", runtime,
    )


def check_polarization() -> CheckResult:
    t0 = time.perf_counter()
    durations = np.linspace(0.1, 30.0, 60)
    half_ns = repolarization_experiment(no_strain_model(), "A1", PUMP_50UW["no_strain"], durations).meta["polarization"][0]
    half_s = repolarization_experiment(strain_model(), "A1", PUMP_50UW["strain"], durations).meta["polarization"][0]
    runtime = time.perf_counter() - t0
    ok_ns = abs(half_ns - 0.60) <= 0.03
    ok_s = abs(half_s - 0.53) <= 0.03
    ok = ok_ns and ok_s and runtime < 30
    return CheckResult(
        3, "ground-state polarization", ok, {"p_half_no_strain": half_ns, "p_half_strain": half_s},
        f"P(+-1/2) = {half_ns:.4f} (0.60 +- 0.03) {'ok' if ok_ns else 'MISS'}, "
        f"strained {half_s:.4f} (0.53 +- 0.03) {'ok' if ok_s else 'MISS'}",
        runtime,
    )


def check_emission_maps() -> CheckResult:
    t0 = time.perf_counter()
    base = no_strain_model()
    point = ([RATES_STRAIN.gamma_3], [RATES_STRAIN.gamma_4])
    d = {ex: float(emission_change_map(base, *point, excitation=ex)[0, 0]) for ex in ("A1", "A2", "offres")}
    runtime = time.perf_counter() - t0
    ok = abs(d["A1"] + 5.7) <= 1.5 and abs(d["A2"]) < 1.5 and abs(d["offres"] + 5.1) <= 1.5 and runtime < 60
    return CheckResult(
        4, "emission change at the strained metastable rates", ok, d,
        f"A1 {d['A1']:+.2f}% (-5.7 +- 1.5), A2 {d['A2']:+.2f}% (|.| < 1.5), off-res {d['offres']:+.2f}% (-5.1 +- 1.5)",
        runtime,
    )


def check_visibility(n_pairs: int = 2000, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    cfg = no_strain_model(efficiency=VISIBILITY_EFFICIENCY, dark_rate=DARK_COUNTS_HZ)
    res = visibility_experiment(cfg, "A1")
    rng = np.random.default_rng(seed)
    a1, a2 = rng.uniform(1, 1e4, (2, n_pairs))
    dk = rng.uniform(0, 0.9, n_pairs) * np.minimum(a1, a2)
    literal = np.abs((a2 - dk) - (a1 - dk)) / ((a2 - dk) + (a1 - dk))
    exact = all(contrast(x, y, z) == w for x, y, z, w in zip(a1, a2, dk, literal))
    runtime = time.perf_counter() - t0
    ok = res.v >= 0.93 and res.v_dark_corrected >= 0.96 and exact
    return CheckResult(
        5, "spin visibility", ok, {"v": res.v, "v_dark_corrected": res.v_dark_corrected, "formula_exact": exact},
        f"V = {res.v:.4f} (>= 0.93), dark-corrected {res.v_dark_corrected:.4f} (>= 0.96), "
        f"correction formula exact on {n_pairs} pairs: {exact}",
        runtime,
    )


def check_deshelling() -> CheckResult:
    t0 = time.perf_counter()
    cfg = no_strain_model()
    laws = {t: deshelling_law_fit(cfg, t) for t in ("A1", "A2")}
    runtime = time.perf_counter() - t0
    value, ok, parts = {}, True, []
    for t, law in laws.items():
        rel = law.beta / RATES_NO_STRAIN.beta - 1
        good = abs(law.intercept_3) < 0.05 and abs(law.intercept_4) < 0.05 and abs(rel) <= 0.15
        ok &= good
        value[t] = {"intercept_3": law.intercept_3, "intercept_4": law.intercept_4, "beta": law.beta}
        parts.append(f"{t}: intercepts {law.intercept_3:+.4f}/{law.intercept_4:+.4f} MHz, beta {law.beta:.4f} ({rel:+.1%})")
    return CheckResult(6, "deshelling law round trip", ok, value, "; ".join(parts), runtime)


def _pair_trajectory(sim, drive, times):
    states = sim.evolve_many(sim.to_vec(mixed_ground()), drive, times)
    return np.array([PopulationVector.from_levels(populations(sim.to_rho(v))).p for v in states])


def check_rate_oracle() -> CheckResult:
    t0 = time.perf_counter()
    times = np.linspace(0.0, 40.0, 401)
    p0 = PopulationVector.from_levels(np.diag(mixed_ground()).real).p
    # incoherent pumps; beta = 0 so MS3 elimination is not an approximation
    flat = no_strain_model().with_rates(beta=0.0)
    lind = _pair_trajectory(Simulator(flat), DriveState(incoherent_a1=3.0, incoherent_a2=1.0), times)
    rate = integrate(lambda q: full_rate_rhs(q, flat.rates, 3.0, 1.0), p0, times)
    dev_incoherent = float(np.abs(lind - rate).max())
    # coherent drive up to a tenth of the A1 excited-state decay rate
    cfg = no_strain_model()
    sim = Simulator(cfg)
    big = cfg.rates.big_gamma_1
    dev_coherent = {}
    for om in (1.0, 4.33, 10.0, round(0.1 * big, 3)):
        lind = _pair_trajectory(sim, DriveState.resonant("A1", om), times)
        w = coherent_pump_rate(om, big)
        rate = integrate(lambda q: full_rate_rhs(q, cfg.rates, w, 0.0, deshelling_drive=(om, 0.0)), p0, times)
        dev_coherent[om] = float(np.abs(lind - rate).max())
    runtime = time.perf_counter() - t0
    worst = max(dev_coherent.values())
    ok = dev_incoherent < 1e-6 and worst < 0.05 and runtime < 10
    return CheckResult(
        7, "master equation vs rate equations", ok,
        {"incoherent": dev_incoherent, "coherent": {str(k): v for k, v in dev_coherent.items()}},
        f"incoherent max |dp| = {dev_incoherent:.1e} (< 1e-6), coherent max |dp| = {worst:.4f} (< 0.05)",
        runtime,
    )


def check_symmetry(n_draws: int = 1000, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    ops = build_spin_operators()
    u_x = expm(-1j * np.pi * ops.sx)
    rng = np.random.default_rng(seed)
    worst_phi = worst_x = 0.0
    for _ in range(n_draws):
        d, pz, p1, p2 = rng.uniform(-50, 50, 4)
        t1, t2, phi = rng.uniform(-np.pi, np.pi, 3)
        h = general_strain_matrix(d, pz, p1, t1, p2, t2)
        u = expm(-1j * phi * ops.sz)
        shifted = u @ h @ u.conj().T
        worst_phi = max(worst_phi, np.abs(shifted - general_strain_matrix(d, pz, p1, t1 + phi, p2, t2 + 2 * phi)).max())
        flipped = u_x @ h @ u_x.conj().T
        worst_x = max(worst_x, np.abs(flipped - general_strain_matrix(d, pz, -p1, -t1, p2, -t2)).max())
    unstrained = odmr_frequency(strain_hamiltonian(70.0))
    axial = [odmr_frequency(strain_hamiltonian(70.0, _axial(pz))) - 70.0 - 2 * pz for pz in rng.uniform(-10, 10, 50)]
    runtime = time.perf_counter() - t0
    worst_axial = float(np.abs(axial).max())
    ok = worst_phi < 1e-10 and worst_x < 1e-10 and unstrained == 70.0 and worst_axial < 1e-10
    return CheckResult(
        8, "strain Hamiltonian symmetries", ok,
        {"phase_law": worst_phi, "flip_law": worst_x, "odmr_unstrained": unstrained, "axial_shift_error": worst_axial},
        f"phase law {worst_phi:.1e}, flip law {worst_x:.1e} over {n_draws} draws; "
        f"unstrained ODMR {unstrained!r} MHz; axial shift error {worst_axial:.1e}",
        runtime,
    )


def _axial(pz):
    from .spincore import StrainParams

    return StrainParams(pi_z=float(pz))


#: free parameters of the round-trip fit; gamma_3p0 sits at zero, on its bound
FIT_NAMES = ("gamma_r", "gamma_1", "gamma_1p", "gamma_2", "gamma_2p", "gamma_3", "gamma_4", "beta", "gamma_4p0", "efficiency")
#: counts collected at the brightest point of each synthetic trace
PEAK_COUNTS = 500.0


def synthetic_problem(efficiency: float = 0.005, peak_counts: float = PEAK_COUNTS) -> tuple[FitProblem, np.ndarray]:
    """Noiseless traces of every experiment type with the unstrained rates."""
    cfg = no_strain_model(efficiency=efficiency)
    delays = tuple(np.round(np.concatenate([np.linspace(0.05, 2, 30), np.geomspace(2.3, 100, 15)]), 6))
    exps = [
        LifetimeExp("A1"), LifetimeExp("A2"),
        MetastableDecayExp("A1", delays=delays), MetastableDecayExp("A2", delays=delays),
        RepolarizationExp("A1"), RepolarizationExp("A2"),
        SpinDepletionExp("A1", 2.0), SpinDepletionExp("A1", 6.0), SpinDepletionExp("A2", 2.0), SpinDepletionExp("A2", 6.0),
        VisibilityExp("A1", "A2"), VisibilityExp("A2", "A1"),
    ]
    sim = Simulator(cfg)
    data = []
    for exp in exps:
        tr = exp.simulate(cfg, sim)
        data.append((Trace(tr.times, tr.pl, {"kind": exp.kind}, None, peak_counts / tr.pl.max()), exp))
    truth = np.array([cfg.efficiency if n == "efficiency" else getattr(cfg.rates, n) for n in FIT_NAMES])
    bounds = {n: (0.5 * v, 1.5 * v) for n, v in zip(FIT_NAMES, truth)}
    return FitProblem(data, bounds, cfg), truth


def check_round_trip(iterations: int = 9000, seed: int = 0) -> CheckResult:
    problem, truth = synthetic_problem()
    x0 = truth * (1 + 0.15 * (-1) ** np.arange(truth.size))
    t0 = time.perf_counter()
    fit = rate_fit(problem, x0, n_starts=1, seed=seed, check_identifiability=False)
    t_fit = time.perf_counter() - t0
    rel = np.abs(fit.vector(problem.names) / truth - 1)
    t1 = time.perf_counter()
    abc = abc_errors(problem, fit, ABCConfig(iterations=iterations), seed=seed)
    t_abc = time.perf_counter() - t1
    covered = {
        n: bool(abc.ci[n][0] <= v <= abc.ci[n][1]) for n, v in zip(problem.names, truth) if n not in abc.non_identifiable
    }
    ok = bool(rel.max() <= 0.02) and all(covered.values()) and bool(abc.accepted.any()) and t_abc < 600
    missed = [n for n, c in covered.items() if not c]
    return CheckResult(
        9, "rate fit and ABC round trip", ok,
        {
            "max_rel_error": float(rel.max()),
            "best": fit.best_params,
            "ci": {k: list(v) for k, v in abc.ci.items()},
            "acceptance_rate": abc.acceptance_rate,
            "non_identifiable": abc.non_identifiable,
            "abc_seconds": t_abc,
        },
        f"max rel. error {rel.max():.2e} (<= 2%) in {fit.n_evals} evals; ABC {iterations} samples in {t_abc:.0f} s, "
        f"acceptance {abc.acceptance_rate:.1%}, {len(covered)}/{truth.size} identifiable, CI misses {missed or 'none'}",
        t_fit + t_abc,
    )


def check_lineshape() -> CheckResult:
    t0 = time.perf_counter()
    single = overlap_function(PhononData.from_modes([100.0], [1.0], sigma=0.3), eta=1.0)
    e = single.energies
    comb = poisson_comb(1.0, 100.0, 1.0, e)
    errs = []
    for n in range(4):
        sel = (e > n * 100 - 50) & (e <= n * 100 + 50)
        errs.append(abs(np.trapezoid(single.a[sel], e[sel]) / np.trapezoid(comb[sel], e[sel]) - 1))
    modes = synthetic_modes()
    ov = overlap_function(modes)
    norm = ov.norm()
    moment = ov.first_moment() / modes.relaxation_energy - 1
    runtime = time.perf_counter() - t0
    ok = max(errs) <= 0.02 and abs(norm - 1) <= 1e-3 and abs(moment) <= 0.01
    return CheckResult(
        10, "vibrational overlap function", ok,
        {"peak_weight_errors": errs, "norm": norm, "first_moment_error": moment},
        f"peak weights within {max(errs):.2%} (<= 2%), norm {norm:.6f} (1 +- 1e-3), first moment {moment:+.3%} (<= 1%)",
        runtime,
    )


CHECKS: dict[int, Callable[[], CheckResult]] = {
    1: check_lifetimes,
    2: check_metastable,
    3: check_polarization,
    4: check_emission_maps,
    5: check_visibility,
    6: check_deshelling,
    7: check_rate_oracle,
    8: check_symmetry,
    9: check_round_trip,
    10: check_lineshape,
}


def run_checks(keys=None, echo: Callable[[str], None] | None = print) -> list[CheckResult]:
    out = []
    for key in keys or sorted(CHECKS):
        t0 = time.perf_counter()
        res = CHECKS[key]()
        if not res.runtime:
            res.runtime = time.perf_counter() - t0
        if echo:
            echo(res.line())
        out.append(res)
    return out
