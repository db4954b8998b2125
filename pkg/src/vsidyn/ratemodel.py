"""Classical population rate equations and their adiabatic reductions.

Populations here are pair-summed: ``g_half`` is p(g,+1/2) + p(g,-1/2) and so
on. Drives enter as two-way incoherent pump rates; :func:`coherent_pump_rate`
converts a coherent Rabi frequency into the equivalent rate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import E, G, HALF, MS1, MS2, N_LEVELS, THREE_HALF, TWO_PI, RateSet
from .spincore import Transition

# PopulationVector slots
G_HALF, G_THREE, E_HALF, E_THREE, P_MS1, P_MS2, P_MS3, SPARE = range(8)
N_POP = 8


@dataclass(frozen=True)
class PopulationVector:
    """Pair-summed populations; the last slot is unused and stays zero."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (N_POP,):
            raise ValueError(f"population vector must have {N_POP} entries")
        if np.any(p < -1e-12):
            raise ValueError("populations must be >= 0")
        if abs(p.sum() - 1) > 1e-9:
            raise ValueError(f"populations must sum to 1, got {p.sum()}")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_levels(cls, pops10: np.ndarray) -> "PopulationVector":
        """Fold ten-level populations (Lindblad ordering) into pair sums."""
        q = np.asarray(pops10, dtype=float)
        p = np.zeros(N_POP)
        p[G_HALF] = q[G[1]] + q[G[2]]
        p[G_THREE] = q[G[0]] + q[G[3]]
        p[E_HALF] = q[E[1]] + q[E[2]]
        p[E_THREE] = q[E[0]] + q[E[3]]
        p[P_MS1] = q[MS1]
        p[P_MS2] = q[MS2]
        return cls(p)


def default_big_gamma(rates: RateSet) -> float:
    """MS3 decay rate; only its ratio to the MS2 -> MS3 rate matters."""
    return 100.0 * max(rates.big_gamma_1, rates.big_gamma_2)


def coherent_pump_rate(rabi: float, decay: float) -> float:
    """Incoherent rate equivalent to a resonant coherent drive (weak-drive limit).

    Eliminating the optical coherence, which decays at half the population
    decay rate, gives (2 pi Omega)^2 / Gamma.
    """
    if decay <= 0:
        raise ValueError("decay rate must be > 0")
    return (TWO_PI * rabi) ** 2 / decay


def full_rate_rhs(
    p: np.ndarray | PopulationVector,
    rates: RateSet,
    omega_a1: float,
    omega_a2: float,
    big_gamma: float | None = None,
    deshelling_drive: tuple[float, float] | None = None,
) -> np.ndarray:
    """Right-hand side including MS3, with R = beta * (Omega_A1 + Omega_A2).

    ``deshelling_drive`` sets the Rabi frequencies that feed R when they
    differ from the pump rates (coherent drives mapped to rates).
    """
    p = p.p if isinstance(p, PopulationVector) else np.asarray(p, dtype=float)
    big_gamma = default_big_gamma(rates) if big_gamma is None else big_gamma
    o1, o2 = omega_a1, omega_a2
    d1, d2 = deshelling_drive if deshelling_drive is not None else (o1, o2)
    r = rates.beta * (d1 + d2)
    g1, g2 = rates.big_gamma_1, rates.big_gamma_2
    gh, gt, eh, et, m1, m2, m3 = p[:7]
    d = np.zeros(N_POP)
    d[P_MS3] = r * m2 - 2 * big_gamma * m3
    d[E_THREE] = big_gamma * m3 + o2 * gt - (g2 + o2) * et
    d[E_HALF] = big_gamma * m3 + o1 * gh - (g1 + o1) * eh
    d[P_MS2] = rates.gamma_1p * eh + rates.gamma_2p * et - (r + rates.gamma_3p0 + rates.gamma_4p0) * m2
    d[P_MS1] = rates.gamma_1 * eh + rates.gamma_2 * et - (rates.gamma_3 + rates.gamma_4) * m1
    d[G_THREE] = (o2 + rates.gamma_r) * et + rates.gamma_4 * m1 + rates.gamma_4p0 * m2 - o2 * gt
    d[G_HALF] = (o1 + rates.gamma_r) * eh + rates.gamma_3 * m1 + rates.gamma_3p0 * m2 - o1 * gh
    return d


def adiabatic_ms3(p_ms2: float, rates: RateSet, omega_a1: float, omega_a2: float, big_gamma: float | None = None) -> float:
    """Quasi-steady MS3 population R / (2 Gamma) * p_ms2."""
    big_gamma = default_big_gamma(rates) if big_gamma is None else big_gamma
    if big_gamma <= 0:
        raise ValueError("MS3 decay rate must be > 0")
    r = rates.beta * (omega_a1 + omega_a2)
    if r > 0.1 * big_gamma:
        warnings.warn(f"R/Gamma = {r / big_gamma:.3g}; MS3 elimination assumes R << Gamma", stacklevel=2)
    return r / (2 * big_gamma) * p_ms2


@dataclass(frozen=True)
class ReducedParams:
    p_a1: float
    p_a2: float
    pp_a1: float
    pp_a2: float
    kappa: float
    gamma_3p_eff: float
    gamma_4p_eff: float

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")


def reduced_params(rates: RateSet, omega_a1: float, omega_a2: float) -> ReducedParams:
    if omega_a1 < 0 or omega_a2 < 0:
        raise ValueError("drive rates must be >= 0")
    g1, g2 = rates.big_gamma_1, rates.big_gamma_2
    r = rates.beta * (omega_a1 + omega_a2)
    return ReducedParams(
        p_a1=omega_a1 * rates.gamma_1 / (omega_a1 + g1),
        p_a2=omega_a2 * rates.gamma_2 / (omega_a2 + g2),
        pp_a1=omega_a1 * rates.gamma_1p / (omega_a1 + g1),
        pp_a2=omega_a2 * rates.gamma_2p / (omega_a2 + g2),
        kappa=r / 2 * (rates.gamma_1 / (omega_a1 + g1) + rates.gamma_2 / (omega_a2 + g2)),
        gamma_3p_eff=rates.gamma_3p0 + r / 2 * (omega_a1 + rates.gamma_r) / (omega_a1 + g1),
        gamma_4p_eff=rates.gamma_4p0 + r / 2 * (omega_a2 + rates.gamma_r) / (omega_a2 + g2),
    )


# reduced vector order
R_MS2, R_MS1, R_G_THREE, R_G_HALF = range(4)


def reduced_rhs(p4: np.ndarray, rp: ReducedParams, rates: RateSet) -> np.ndarray:
    """Four-level system (ms2, ms1, g_three, g_half) after eliminating MS3 and e."""
    m2, m1, gt, gh = np.asarray(p4, dtype=float)
    return np.array(
        [
            -(rp.gamma_3p_eff + rp.gamma_4p_eff + rp.kappa) * m2 + rp.pp_a1 * gh + rp.pp_a2 * gt,
            rp.kappa * m2 + rp.p_a1 * gh + rp.p_a2 * gt - (rates.gamma_3 + rates.gamma_4) * m1,
            rp.gamma_4p_eff * m2 - (rp.p_a2 + rp.pp_a2) * gt + rates.gamma_4 * m1,
            rp.gamma_3p_eff * m2 - (rp.p_a1 + rp.pp_a1) * gh + rates.gamma_3 * m1,
        ]
    )


def eq3_approx(rates: RateSet, omega: float, transition: Transition | str = Transition.A1) -> float:
    """Single-drive shorthand gamma'_0 + beta * Omega * (Omega + gamma_r) / Gamma.

    Drops the factor 1/2 and the Omega in the denominator of the full law;
    kept for comparison only.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    if Transition(transition) is Transition.A1:
        g0, big = rates.gamma_3p0, rates.big_gamma_1
    else:
        g0, big = rates.gamma_4p0, rates.big_gamma_2
    return g0 + rates.beta * omega * (omega + rates.gamma_r) / big


def level_rate_rhs(
    pops: np.ndarray,
    rates: RateSet,
    pump: np.ndarray,
    gamma_3p: float,
    gamma_4p: float,
) -> np.ndarray:
    """Ten-level classical rate equations, one line per level.

    ``pump[k]`` is the two-way rate between g_k and e_k. MS2 empties directly
    into the ground pairs at ``gamma_3p`` and ``gamma_4p``.
    """
    q = np.asarray(pops, dtype=float)
    d = np.zeros(N_LEVELS)
    for k in range(4):
        pair_half = k in HALF
        isc_1 = rates.gamma_1 if pair_half else rates.gamma_2
        isc_2 = rates.gamma_1p if pair_half else rates.gamma_2p
        from_ms1 = (rates.gamma_3 if pair_half else rates.gamma_4) / 2
        from_ms2 = (gamma_3p if pair_half else gamma_4p) / 2
        d[E[k]] = pump[k] * q[G[k]] - (rates.gamma_r + isc_1 + isc_2 + pump[k]) * q[E[k]]
        d[G[k]] = (rates.gamma_r + pump[k]) * q[E[k]] - pump[k] * q[G[k]] + from_ms1 * q[MS1] + from_ms2 * q[MS2]
    e_half = q[E[1]] + q[E[2]]
    e_three = q[E[0]] + q[E[3]]
    d[MS1] = rates.gamma_1 * e_half + rates.gamma_2 * e_three - (rates.gamma_3 + rates.gamma_4) * q[MS1]
    d[MS2] = rates.gamma_1p * e_half + rates.gamma_2p * e_three - (gamma_3p + gamma_4p) * q[MS2]
    return d


def pump_vector(omega_a1: float, omega_a2: float, offres: float = 0.0) -> np.ndarray:
    pump = np.full(4, float(offres))
    pump[list(HALF)] += omega_a1
    pump[list(THREE_HALF)] += omega_a2
    return pump


def integrate(rhs, p0: np.ndarray, t_eval: np.ndarray, rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Integrate ``rhs(p)`` with an implicit stiff solver; rows follow ``t_eval``."""
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(
        lambda _t, y: rhs(y),
        (0.0, float(t_eval[-1])),
        np.asarray(p0, dtype=float),
        method="Radau",
        t_eval=t_eval,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise RuntimeError(f"rate-equation integration failed: {sol.message}")
    return sol.y.T


def linear_generator(rhs, n: int) -> np.ndarray:
    """Matrix of a linear right-hand side, column by column."""
    return np.column_stack([rhs(np.eye(n)[i]) for i in range(n)])


def steady_state(rhs, n: int) -> np.ndarray:
    """Normalised null vector of a linear, population-conserving rhs."""
    m = linear_generator(rhs, n)
    a = np.vstack([m, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return sol
