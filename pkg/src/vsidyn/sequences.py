"""Pulse-sequence engine and the canonical all-optical experiments.

Every experiment starts from a charge reset, modelled as an instantaneous
replacement of the state by the fully mixed ground manifold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .dynamics import (
    DARK,
    DriveState,
    ModelConfig,
    Simulator,
    mixed_ground,
    populations,
)
from .presets import OFFRES_EMISSION_MAP, PUMP_50UW, RABI_20NW, RATES_NO_STRAIN
from .spincore import Transition

PROBE_DURATION = 0.3  # us
PROBE_RABI = RABI_20NW
LIFETIME_PULSE_RABI = 20.0  # MHz, for the 1 ns excitation pulse


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class PulseSegment:
    duration: float
    drive: DriveState = DARK
    record: bool = False
    label: str = ""
    reset: bool = False  # charge reset before the segment starts

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be > 0, got {self.duration}")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[PulseSegment, ...]
    sample_dt: float = 0.01
    initial_state: str | np.ndarray = field(default="thermal_ground", compare=False)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("a pulse sequence needs at least one segment")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be > 0")
        if isinstance(self.initial_state, str) and self.initial_state != "thermal_ground":
            raise ValueError(f"unknown initial state {self.initial_state!r}")

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


@dataclass
class Trace:
    """Time-stamped PL record in counts/us.

    ``exposure`` is the effective integration time per point in us (summed
    over repetitions); it sets the Poisson uncertainty when ``sigma`` is None.
    """

    times: np.ndarray
    pl: np.ndarray
    meta: dict = field(default_factory=dict)
    sigma: np.ndarray | None = None
    exposure: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.pl = np.asarray(self.pl, dtype=float)
        if self.times.shape != self.pl.shape or self.times.ndim != 1:
            raise ValueError("times and pl must be 1-D arrays of equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.any(self.pl < 0):
            raise ValueError("trace PL must be >= 0")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.pl.shape or np.any(self.sigma <= 0):
                raise ValueError("sigma must be positive and match pl")
        if not self.exposure > 0:
            raise ValueError("exposure must be > 0")

    def __len__(self) -> int:
        return self.times.size

    def poisson_sigma(self) -> np.ndarray:
        if self.sigma is not None:
            return self.sigma
        return np.sqrt(np.maximum(self.pl * self.exposure, 1.0)) / self.exposure


def _initial_vec(sim: Simulator, initial_state) -> np.ndarray:
    if isinstance(initial_state, str):
        return sim.to_vec(mixed_ground())
    return sim.to_vec(initial_state)


def run_sequence(seq: PulseSequence, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
    """Propagate through all segments, sampling PL in recording segments.

    Samples sit at ``t0 + k * sample_dt`` (half-open per segment), in us from
    the start of the sequence. The final density matrix is in ``meta``.
    """
    sim = sim or Simulator(cfg)
    vec = _initial_vec(sim, seq.initial_state)
    reset_vec = sim.to_vec(mixed_ground())
    dark = cfg.dark_rate * 1e-6
    times, pl = [], []
    t0 = 0.0
    for seg in seq.segments:
        if seg.reset:
            vec = reset_vec.copy()
        if seg.record:
            n = max(1, math.ceil(seg.duration / seq.sample_dt - 1e-9))
            step = sim.step_matrix(seg.drive, seq.sample_dt)
            for k in range(n):
                times.append(t0 + k * seq.sample_dt)
                pl.append(max(sim.pl(vec), 0.0) + dark)
                if k < n - 1:
                    vec = step @ vec
            vec = sim.evolve(vec, seg.drive, seg.duration - (n - 1) * seq.sample_dt)
        else:
            vec = sim.evolve(vec, seg.drive, seg.duration)
        t0 += seg.duration
    meta = {"label": seq.label, "final_rho": sim.to_rho(vec)}
    return Trace(np.array(times), np.array(pl), meta)


# -- observables -----------------------------------------------------------


def polarization(rho: np.ndarray) -> tuple[float, float]:
    """Normalised ground-state populations (P_{+-1/2}, P_{+-3/2})."""
    g = populations(rho)[:4]
    total = g.sum()
    if not total > 0:
        raise ValueError("no ground-state population")
    half = (g[1] + g[2]) / total
    return float(half), float((g[0] + g[3]) / total)


def contrast(pl_a1: float, pl_a2: float, pl_dark: float = 0.0) -> float:
    """Ground-state spin contrast from integrated probe PL, dark-count corrected."""
    s1, s2 = pl_a1 - pl_dark, pl_a2 - pl_dark
    denom = s1 + s2
    if denom <= 0:
        raise ExperimentError("zero total probe PL; visibility undefined")
    return abs(s2 - s1) / denom


def visibility_from_populations(p_32: float, p_12: float) -> float:
    return abs(p_32 - p_12) / (p_32 + p_12)


@dataclass(frozen=True)
class VisibilityResult:
    v: float
    p_12: float
    p_32: float
    v_dark_corrected: float
    pl_a1: float
    pl_a2: float
    pl_dark: float


def _probe_counts(sim: Simulator, vec: np.ndarray, transition, rabi: float, duration: float) -> float:
    _, counts = sim.emitted(vec, DriveState.resonant(transition, rabi), duration)
    return max(counts, 0.0)


def visibility_experiment(
    cfg: ModelConfig,
    init_transition: Transition | str = Transition.A1,
    pump_duration: float = 80.0,
    probe_duration: float = PROBE_DURATION,
    probe_rabi: float = PROBE_RABI,
    pump_rabi: float = RABI_20NW,
    sim: Simulator | None = None,
) -> VisibilityResult:
    """Reset, resonant pump, then one probe per transition (separate repetitions).

    Probe PL is integrated over the full probe and includes dark counts.
    """
    if pump_duration <= 0 or probe_duration <= 0:
        raise ValueError("durations must be > 0")
    sim = sim or Simulator(cfg)
    start = sim.to_vec(mixed_ground())
    pumped = sim.evolve(start, DriveState.resonant(init_transition, pump_rabi), pump_duration)
    dark = cfg.dark_rate * 1e-6 * probe_duration
    pl_a1 = _probe_counts(sim, pumped, Transition.A1, probe_rabi, probe_duration) + dark
    pl_a2 = _probe_counts(sim, pumped, Transition.A2, probe_rabi, probe_duration) + dark
    v = contrast(pl_a1, pl_a2)
    v_corr = contrast(pl_a1, pl_a2, dark)
    # p_32 + p_12 = 1 with the sign fixed by which probe is brighter
    hi, lo = (1 + v) / 2, (1 - v) / 2
    p_32, p_12 = (hi, lo) if pl_a2 >= pl_a1 else (lo, hi)
    return VisibilityResult(v, p_12, p_32, v_corr, pl_a1, pl_a2, dark)


def pumped_fidelity(
    cfg: ModelConfig,
    init_transition: Transition | str,
    pump_duration: float = 80.0,
    pump_rabi: float = RABI_20NW,
    sim: Simulator | None = None,
) -> float:
    """Ground population fraction shelved by resonant pumping (opposite manifold)."""
    sim = sim or Simulator(cfg)
    vec = sim.evolve(sim.to_vec(mixed_ground()), DriveState.resonant(init_transition, pump_rabi), pump_duration)
    p_half, p_three = polarization(sim.to_rho(vec))
    return p_three if Transition(init_transition) is Transition.A1 else p_half


# -- lifetime ----------------------------------------------------------------


def fit_exponential(times: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    """Least-squares fit of ``a * exp(-t / tau) + c``; returns (a, tau, c)."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    c0 = values[-1]
    y = values - c0
    pos = y > y.max() * 1e-3
    if pos.sum() >= 2:
        slope = np.polyfit(times[pos], np.log(y[pos]), 1)[0]
        tau0 = -1 / slope if slope < 0 else (times[-1] - times[0]) / 3
    else:
        tau0 = (times[-1] - times[0]) / 3
    try:
        popt, _ = curve_fit(
            lambda t, a, tau, c: a * np.exp(-(t - times[0]) / tau) + c,
            times,
            values,
            p0=[y[0], tau0, c0],
            maxfev=20000,
        )
    except RuntimeError as exc:
        raise ExperimentError(f"exponential fit did not converge: {exc}") from exc
    a, tau, c = popt
    return float(a * np.exp(times[0] / tau)), float(tau), float(c)


def lifetime_sequence(
    transition: Transition | str,
    pulse_ns: float = 1.0,
    window: float = 0.1,
    rabi: float = LIFETIME_PULSE_RABI,
    sample_dt: float = 0.0005,
) -> PulseSequence:
    return PulseSequence(
        (
            PulseSegment(pulse_ns * 1e-3, DriveState.resonant(transition, rabi), label="pulse", reset=True),
            PulseSegment(window, DARK, record=True, label="decay"),
        ),
        sample_dt=sample_dt,
        label=f"lifetime_{Transition(transition).value}",
    )


def lifetime_experiment(
    cfg: ModelConfig,
    transition: Transition | str = Transition.A1,
    pulse_ns: float = 1.0,
    window: float = 0.1,
    rabi: float = LIFETIME_PULSE_RABI,
    sample_dt: float = 0.0005,
    sim: Simulator | None = None,
) -> tuple[Trace, float]:
    """Excited-state decay after a short resonant pulse; returns (trace, tau in ns).

    Trace times are measured from the end of the pulse.
    """
    transition = Transition(transition)
    rates = cfg.rates
    gamma = rates.big_gamma_1 if transition is Transition.A1 else rates.big_gamma_2
    if pulse_ns * 1e-3 >= 1 / gamma:
        raise ValueError("pulse must be shorter than the excited-state lifetime")
    seq = lifetime_sequence(transition, pulse_ns, window, rabi, sample_dt)
    trace = run_sequence(seq, cfg, sim)
    trace.times = trace.times - pulse_ns * 1e-3
    _, tau, _ = fit_exponential(trace.times, trace.pl)
    trace.meta["tau_ns"] = tau * 1e3
    return trace, tau * 1e3


# -- metastable decay --------------------------------------------------------


def metastable_decay_experiment(
    cfg: ModelConfig,
    pump_drive: DriveState,
    delays: Sequence[float],
    pump_duration: float = 10.0,
    probe_duration: float = PROBE_DURATION,
    probe_rabi: float = PROBE_RABI,
    sim: Simulator | None = None,
) -> dict[Transition, Trace]:
    """Off-resonant pump, dark wait of each delay, then a resonant probe.

    Returns one trace per probe transition holding the mean probe count
    rate (counts/us) against the delay (us).
    """
    delays = np.asarray(delays, dtype=float)
    if delays.ndim != 1 or np.any(np.diff(delays) <= 0) or np.any(delays < 0):
        raise ValueError("delays must be non-negative and strictly increasing")
    sim = sim or Simulator(cfg)
    pumped = sim.evolve(sim.to_vec(mixed_ground()), pump_drive, pump_duration)
    states = sim.evolve_many(pumped, DARK, delays)
    out = {}
    for tr in Transition:
        _, integral = sim.integrated(DriveState.resonant(tr, probe_rabi), probe_duration)
        counts = np.real(states @ (integral.T @ sim.pl_row)) / probe_duration + cfg.dark_rate * 1e-6
        out[tr] = Trace(
            delays.copy(),
            np.maximum(counts, 0.0),
            {"label": f"metastable_decay_{tr.value}", "probe": tr.value},
        )
    return out


def fit_recovery(delays: np.ndarray, signal: np.ndarray) -> dict:
    """Two-component recovery fit ``a - b exp(-t/tau_fast) - c exp(-t/tau_slow)``.

    The slow component carries the MS2 intrinsic decay; ``tau_fast`` is the
    MS1 lifetime.
    """
    delays = np.asarray(delays, float)
    signal = np.asarray(signal, float)
    span = signal[-1] - signal[0]
    best = None
    for frac in (0.1, 0.3, 0.6):
        p0 = [signal[-1], 0.5 * span, delays[int(len(delays) * frac)] or 0.1, 0.5 * span, delays[-1] / 3]
        try:
            popt, _ = curve_fit(
                lambda t, a, b, t1, c, t2: a - b * np.exp(-t / t1) - c * np.exp(-t / t2),
                delays,
                signal,
                p0=p0,
                bounds=([-np.inf, -np.inf, 1e-4, -np.inf, 1e-4], [np.inf] * 5),
                maxfev=50000,
            )
        except RuntimeError:
            continue
        resid = np.sum((signal - (popt[0] - popt[1] * np.exp(-delays / popt[2]) - popt[3] * np.exp(-delays / popt[4]))) ** 2)
        if best is None or resid < best[1]:
            best = (popt, resid)
    if best is None:
        raise ExperimentError("recovery fit did not converge")
    a, b, t1, c, t2 = best[0]
    if t1 > t2:
        b, t1, c, t2 = c, t2, b, t1
    return {"tau_fast": float(t1), "tau_slow": float(t2), "amp_fast": float(b), "amp_slow": float(c), "offset": float(a)}


def default_recovery_delays(cfg: ModelConfig) -> np.ndarray:
    """Dense grid over the MS1 recovery plus a logarithmic tail for MS2."""
    tau = 1 / (cfg.rates.gamma_3 + cfg.rates.gamma_4)
    slow = 1 / max(cfg.rates.gamma_3p0 + cfg.rates.gamma_4p0, 1e-3)
    dense = np.linspace(0.1, 8 * tau, 40)
    tail = np.geomspace(8 * tau * 1.2, max(6 * slow, 10 * tau), 15)
    return np.concatenate([dense, tail])


# -- repolarisation ------------------------------------------------------------


def opposite(transition: Transition | str) -> Transition:
    return Transition.A2 if Transition(transition) is Transition.A1 else Transition.A1


def repolarization_experiment(
    cfg: ModelConfig,
    init_transition: Transition | str,
    offres_drive: DriveState,
    durations: Sequence[float],
    init_duration: float = 20.0,
    init_rabi: float = RABI_20NW,
    probe_duration: float = PROBE_DURATION,
    probe_rabi: float = PROBE_RABI,
    sim: Simulator | None = None,
) -> Trace:
    """Resonant initialisation, variable 730 nm exposure, opposite-transition probe.

    The trace holds the mean probe count rate (counts/us) against the 730 nm
    duration. ``meta`` holds the relative change ``delta_pl`` against the first point,
    the state after the longest exposure and its polarisation.
    """
    durations = np.asarray(durations, dtype=float)
    if durations.ndim != 1 or np.any(np.diff(durations) <= 0) or np.any(durations <= 0):
        raise ValueError("durations must be positive and strictly increasing")
    sim = sim or Simulator(cfg)
    init = sim.evolve(sim.to_vec(mixed_ground()), DriveState.resonant(init_transition, init_rabi), init_duration)
    states = sim.evolve_many(init, offres_drive, durations)
    readout = opposite(init_transition)
    _, integral = sim.integrated(DriveState.resonant(readout, probe_rabi), probe_duration)
    counts = np.maximum(np.real(states @ (integral.T @ sim.pl_row)), 0.0) / probe_duration + cfg.dark_rate * 1e-6
    final_rho = sim.to_rho(states[-1])
    meta = {
        "label": f"repolarization_{Transition(init_transition).value}",
        "readout": readout.value,
        "delta_pl": counts / counts[0] - 1,
        "final_rho": final_rho,
        "polarization": polarization(final_rho),
    }
    return Trace(durations.copy(), counts, meta)


# -- spin depletion -----------------------------------------------------------


def spin_depletion_experiment(
    cfg: ModelConfig,
    transition: Transition | str,
    powers: Sequence[float],
    window: float = 40.0,
    init_drive: DriveState | None = None,
    init_duration: float = 40.0,
    wait: float = 2.0,
    sample_dt: float = 0.2,
    sim: Simulator | None = None,
) -> list[Trace]:
    """730 nm initialisation, dark wait, then resonant drive with PL recorded.

    ``powers`` are resonant Rabi frequencies in MHz; one trace per entry.
    """
    init_drive = init_drive or PUMP_50UW["no_strain"]
    sim = sim or Simulator(cfg)
    traces = []
    for rabi in powers:
        seq = PulseSequence(
            (
                PulseSegment(init_duration, init_drive, label="init", reset=True),
                PulseSegment(wait, DARK, label="wait"),
                PulseSegment(window, DriveState.resonant(transition, rabi), record=True, label="drive"),
            ),
            sample_dt=sample_dt,
            label=f"spin_depletion_{Transition(transition).value}",
        )
        tr = run_sequence(seq, cfg, sim)
        tr.times = tr.times - init_duration - wait
        tr.meta["rabi"] = float(rabi)
        traces.append(tr)
    return traces


# -- emission maps ------------------------------------------------------------


def integrated_emission(cfg: ModelConfig, drive: DriveState, window: float, sim: Simulator | None = None) -> float:
    sim = sim or Simulator(cfg)
    _, counts = sim.emitted(sim.to_vec(mixed_ground()), drive, window)
    return counts


def excitation_drive(excitation: str) -> DriveState:
    if excitation in ("A1", "A2"):
        return DriveState.resonant(excitation, RABI_20NW)
    if excitation == "offres":
        return DriveState(offres_pump=OFFRES_EMISSION_MAP)
    raise ValueError(f"unknown excitation {excitation!r}")


def emission_change_map(
    cfg_base: ModelConfig,
    gamma3_grid: Sequence[float],
    gamma4_grid: Sequence[float],
    excitation: str = "A1",
    window: float = 40.0,
    reference: ModelConfig | None = None,
) -> np.ndarray:
    """Relative change (%) of emission integrated over ``window``.

    Rows follow ``gamma3_grid``, columns ``gamma4_grid``. The reference is the
    unstrained rate set unless ``reference`` is given; all other parameters
    come from ``cfg_base``. The centre starts in the mixed ground state.
    """
    g3 = np.asarray(gamma3_grid, float)
    g4 = np.asarray(gamma4_grid, float)
    if np.any(g3 <= 0) or np.any(g4 <= 0):
        raise ValueError("grids must be positive")
    drive = excitation_drive(excitation)
    if reference is None:
        reference = cfg_base.with_rates(gamma_3=RATES_NO_STRAIN.gamma_3, gamma_4=RATES_NO_STRAIN.gamma_4)
    ref = integrated_emission(reference, drive, window)
    out = np.empty((g3.size, g4.size))
    for i, a in enumerate(g3):
        for j, b in enumerate(g4):
            out[i, j] = 100 * (integrated_emission(cfg_base.with_rates(gamma_3=a, gamma_4=b), drive, window) / ref - 1)
    return out


def visibility_curve(
    cfg: ModelConfig,
    init_transition: Transition | str,
    probe_transition: Transition | str,
    pump_durations: Sequence[float],
    probe_duration: float = PROBE_DURATION,
    probe_rabi: float = PROBE_RABI,
    pump_rabi: float = RABI_20NW,
    sim: Simulator | None = None,
) -> Trace:
    """Mean probe count rate against the resonant pump duration."""
    durations = np.asarray(pump_durations, dtype=float)
    if durations.ndim != 1 or np.any(np.diff(durations) <= 0) or np.any(durations <= 0):
        raise ValueError("pump durations must be positive and strictly increasing")
    sim = sim or Simulator(cfg)
    states = sim.evolve_many(sim.to_vec(mixed_ground()), DriveState.resonant(init_transition, pump_rabi), durations)
    _, integral = sim.integrated(DriveState.resonant(probe_transition, probe_rabi), probe_duration)
    rate = np.maximum(np.real(states @ (integral.T @ sim.pl_row)), 0.0) / probe_duration + cfg.dark_rate * 1e-6
    label = f"visibility_{Transition(init_transition).value}_{Transition(probe_transition).value}"
    return Trace(durations.copy(), rate, {"label": label})


# -- experiment descriptors ---------------------------------------------------
#
# A descriptor fixes every experimental setting of one measured trace, so a
# fit can re-simulate it under trial model parameters. Numeric fields can be
# fitted as "ds<i>.<field>".


@dataclass(frozen=True)
class LifetimeExp:
    transition: str = "A1"
    pulse_ns: float = 1.0
    window: float = 0.1
    rabi: float = LIFETIME_PULSE_RABI
    sample_dt: float = 0.0005
    kind = "lifetime"

    def simulate(self, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
        return lifetime_experiment(cfg, self.transition, self.pulse_ns, self.window, self.rabi, self.sample_dt, sim)[0]


@dataclass(frozen=True)
class MetastableDecayExp:
    probe: str = "A1"
    delays: tuple[float, ...] = ()
    offres_pump: float = 13.95
    offres_gamma_3p: float | None = 0.25
    offres_gamma_4p: float | None = 0.33
    pump_duration: float = 10.0
    probe_rabi: float = PROBE_RABI
    kind = "metastable_decay"

    def simulate(self, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
        drive = DriveState(
            offres_pump=self.offres_pump, offres_gamma_3p=self.offres_gamma_3p, offres_gamma_4p=self.offres_gamma_4p
        )
        delays = self.delays or tuple(default_recovery_delays(cfg))
        out = metastable_decay_experiment(cfg, drive, delays, self.pump_duration, PROBE_DURATION, self.probe_rabi, sim)
        return out[Transition(self.probe)]


@dataclass(frozen=True)
class RepolarizationExp:
    init_transition: str = "A1"
    durations: tuple[float, ...] = tuple(np.round(np.geomspace(0.1, 30.0, 40), 6))
    offres_pump: float = 0.60
    offres_gamma_3p: float | None = 0.18
    offres_gamma_4p: float | None = 0.26
    init_duration: float = 20.0
    probe_rabi: float = PROBE_RABI
    kind = "repolarization"

    def simulate(self, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
        drive = DriveState(
            offres_pump=self.offres_pump, offres_gamma_3p=self.offres_gamma_3p, offres_gamma_4p=self.offres_gamma_4p
        )
        return repolarization_experiment(
            cfg, self.init_transition, drive, self.durations, self.init_duration, RABI_20NW, PROBE_DURATION, self.probe_rabi, sim
        )


@dataclass(frozen=True)
class SpinDepletionExp:
    transition: str = "A1"
    rabi: float = RABI_20NW
    window: float = 40.0
    offres_pump: float = 0.60
    offres_gamma_3p: float | None = 0.18
    offres_gamma_4p: float | None = 0.26
    sample_dt: float = 0.2
    kind = "spin_depletion"

    def simulate(self, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
        drive = DriveState(
            offres_pump=self.offres_pump, offres_gamma_3p=self.offres_gamma_3p, offres_gamma_4p=self.offres_gamma_4p
        )
        return spin_depletion_experiment(
            cfg, self.transition, [self.rabi], self.window, drive, sample_dt=self.sample_dt, sim=sim
        )[0]


@dataclass(frozen=True)
class VisibilityExp:
    init_transition: str = "A1"
    probe_transition: str = "A2"
    pump_durations: tuple[float, ...] = tuple(np.round(np.geomspace(0.05, 80.0, 25), 6))
    probe_rabi: float = PROBE_RABI
    pump_rabi: float = RABI_20NW
    kind = "visibility"

    def simulate(self, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
        return visibility_curve(
            cfg, self.init_transition, self.probe_transition, self.pump_durations, PROBE_DURATION, self.probe_rabi, self.pump_rabi, sim
        )


@dataclass(frozen=True)
class SequenceExp:
    """A user-written pulse sequence; segments may be given as plain dicts."""

    segments: tuple[PulseSegment, ...] = ()
    sample_dt: float = 0.01
    label: str = "sequence"
    kind = "sequence"

    def __post_init__(self):
        segs = tuple(_segment(s) for s in self.segments)
        if not segs:
            raise ValueError("a sequence experiment needs at least one segment")
        if not any(s.record for s in segs):
            raise ValueError("a sequence experiment needs at least one recording segment")
        object.__setattr__(self, "segments", segs)

    def simulate(self, cfg: ModelConfig, sim: Simulator | None = None) -> Trace:
        return run_sequence(PulseSequence(self.segments, self.sample_dt, label=self.label), cfg, sim)


SEGMENT_KEYS = {"duration", "drive", "record", "label", "reset"}


def _segment(spec) -> PulseSegment:
    if isinstance(spec, PulseSegment):
        return spec
    if not isinstance(spec, dict):
        raise ValueError(f"a segment must be an object, got {spec!r}")
    unknown = set(spec) - SEGMENT_KEYS
    if unknown:
        raise ValueError(f"unknown segment key(s) {sorted(unknown)}; allowed {sorted(SEGMENT_KEYS)}")
    if "duration" not in spec:
        raise ValueError("every segment needs a duration")
    drive = spec.get("drive", {})
    if not isinstance(drive, DriveState):
        allowed = {f.name for f in fields(DriveState)}
        bad = set(drive) - allowed
        if bad:
            raise ValueError(f"unknown drive key(s) {sorted(bad)}; allowed {sorted(allowed)}")
        drive = DriveState(**drive)
    return PulseSegment(
        float(spec["duration"]), drive, bool(spec.get("record", False)), str(spec.get("label", "")), bool(spec.get("reset", False))
    )


EXPERIMENTS = {
    cls.kind: cls
    for cls in (LifetimeExp, MetastableDecayExp, RepolarizationExp, SpinDepletionExp, VisibilityExp, SequenceExp)
}


def make_experiment(kind: str, **params):
    """Build a descriptor by name; sequences given as lists become tuples."""
    try:
        cls = EXPERIMENTS[kind]
    except KeyError:
        raise ValueError(f"unknown experiment {kind!r}; choose from {sorted(EXPERIMENTS)}") from None
    names = {f.name for f in fields(cls)}
    unknown = set(params) - names
    if unknown:
        raise ValueError(f"unknown parameter(s) for {kind}: {sorted(unknown)}")
    clean = {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}
    return cls(**clean)
