"""Vibrational overlap functions and golden-rule intersystem-crossing rates.

Energies are in meV and times in hbar/meV, so ``E * t`` is a phase. The
generating function is taken at zero temperature: only phonon emission.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants as const

DEFAULT_ETA = 1.0  # meV
DEFAULT_SIGMA = 2.0  # meV

#: meV / hbar in 1/s
MEV_PER_HBAR = const.milli * const.e / const.hbar


class AliasingError(ValueError):
    pass


@dataclass(frozen=True)
class PhononData:
    omega: np.ndarray  # meV
    sigma: np.ndarray  # meV
    s: np.ndarray  # partial Huang-Rhys factors

    def __post_init__(self):
        om, sg, s = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.omega, self.sigma, self.s))
        if not (om.shape == sg.shape == s.shape) or om.ndim != 1:
            raise ValueError("omega, sigma and s must be 1-D arrays of equal length")
        if np.any(om <= 0) or np.any(sg <= 0) or np.any(s < 0):
            raise ValueError("need omega > 0, sigma > 0 and s >= 0 for every mode")
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "sigma", sg)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_modes(cls, omega, s, sigma: float | np.ndarray = DEFAULT_SIGMA) -> "PhononData":
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        return cls(omega, np.broadcast_to(np.asarray(sigma, dtype=float), omega.shape), s)

    @property
    def total_s(self) -> float:
        return float(self.s.sum())

    @property
    def relaxation_energy(self) -> float:
        """Sum of s_k * omega_k (meV)."""
        return float(self.s @ self.omega)

    def __len__(self) -> int:
        return self.omega.size


def synthetic_modes() -> PhononData:
    """Small made-up mode set of acoustic-like and optical-like bands."""
    return PhononData.from_modes(
        omega=[22.0, 35.0, 48.0, 63.0, 78.0, 95.0],
        s=[0.35, 0.60, 0.45, 0.80, 0.30, 0.15],
        sigma=DEFAULT_SIGMA,
    )


def partial_hr_factors(
    displacements: np.ndarray,
    masses: np.ndarray,
    mode_vectors: np.ndarray,
    omega: np.ndarray,
) -> np.ndarray:
    """Partial Huang-Rhys factors from atomic displacements.

    ``displacements`` (n_atoms, 3) in Angstrom, ``masses`` (n_atoms,) in amu,
    ``mode_vectors`` (n_modes, n_atoms, 3) orthonormal in mass-weighted
    coordinates, ``omega`` (n_modes,) in meV.
    """
    r = np.asarray(displacements, dtype=float)
    m = np.asarray(masses, dtype=float)
    e = np.asarray(mode_vectors, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if r.ndim != 2 or r.shape[1] != 3:
        raise ValueError("displacements must have shape (n_atoms, 3)")
    if m.shape != (r.shape[0],):
        raise ValueError("need one mass per atom")
    if e.ndim != 3 or e.shape[1:] != r.shape:
        raise ValueError("mode_vectors must have shape (n_modes, n_atoms, 3)")
    if omega.shape != (e.shape[0],):
        raise ValueError("need one frequency per mode")
    q = np.einsum("a,ai,kai->k", np.sqrt(m), r, e)  # sqrt(amu) * Angstrom
    q_si = q * np.sqrt(const.atomic_mass) * const.angstrom
    w_si = omega * MEV_PER_HBAR  # rad/s
    return q_si**2 * w_si / (2 * const.hbar)


def spectral_density(modes: PhononData, grid: np.ndarray) -> np.ndarray:
    """Gaussian-broadened electron-phonon spectral density on ``grid`` (1/meV)."""
    grid = np.asarray(grid, dtype=float)
    if len(modes) == 0:
        return np.zeros_like(grid)
    if grid.min() > (modes.omega - 5 * modes.sigma).min() or grid.max() < (modes.omega + 5 * modes.sigma).max():
        warnings.warn("grid does not cover every mode within 5 sigma", stacklevel=2)
    x = (grid[:, None] - modes.omega[None, :]) / modes.sigma[None, :]
    return (np.exp(-0.5 * x**2) / (np.sqrt(2 * np.pi) * modes.sigma) * modes.s).sum(axis=1)


@dataclass(frozen=True)
class OverlapFunction:
    energies: np.ndarray  # meV
    a: np.ndarray  # 1/meV
    eta: float

    def __call__(self, energy: float | np.ndarray) -> np.ndarray:
        e = np.asarray(energy, dtype=float)
        if np.any(e < self.energies[0]) or np.any(e > self.energies[-1]):
            raise ValueError("energy outside the overlap-function grid")
        return np.interp(e, self.energies, self.a)

    def norm(self) -> float:
        return float(np.trapezoid(self.a, self.energies))

    def first_moment(self) -> float:
        return float(np.trapezoid(self.energies * self.a, self.energies))


def _transform_grid(modes: PhononData, eta: float, span: float, time_step: float | None):
    top = float((modes.omega + 10 * modes.sigma).max()) if len(modes) else 10 * eta
    s_tot = modes.total_s if len(modes) else 0.0
    n_phonon = s_tot + 6 * np.sqrt(s_tot) + 4
    e_half = max(span, n_phonon * top, 200 * eta)
    nyquist = np.pi / top
    dt = np.pi / e_half if time_step is None else float(time_step)
    if dt > nyquist:
        raise AliasingError(f"time step {dt:.4g} exceeds the Nyquist limit {nyquist:.4g} for the highest mode")
    t_half = 40.0 / eta
    n = int(2 ** np.ceil(np.log2(2 * t_half / dt)))
    assert n * dt / 2 >= 20 / eta
    return n, dt


def overlap_function(
    modes: PhononData,
    eta: float = DEFAULT_ETA,
    grid: np.ndarray | None = None,
    time_step: float | None = None,
) -> OverlapFunction:
    """Normalised vibrational overlap function by the generating-function method.

    S(t) is the Fourier transform of the broadened spectral density,
    A(E) = 1/(2 pi) int dt exp(S(t) - S(0)) exp(-i E t - eta |t|). Both
    transforms are FFTs over one periodic window, on which A integrates to
    one exactly. With ``grid`` the result is interpolated onto it.
    """
    if not eta > 0:
        raise ValueError("eta must be > 0")
    span = 0.0 if grid is None else float(np.max(np.abs(grid)))
    n, dt = _transform_grid(modes, eta, span, time_step)
    de = 2 * np.pi / (n * dt)
    idx = np.arange(n) - n // 2
    energies = idx * de
    times = idx * dt
    s_e = spectral_density(modes, energies) if len(modes) else np.zeros(n)
    # sum_m S(E_m) exp(+i E_m t_n) dE
    s_t = np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(s_e))) * n * de
    s0 = s_t[n // 2].real
    g = np.exp(s_t - s0 - eta * np.abs(times))
    # 1/(2 pi) sum_n g(t_n) exp(-i E_m t_n) dt
    a = np.fft.fftshift(np.fft.fft(np.fft.ifftshift(g))).real * dt / (2 * np.pi)
    if grid is None:
        return OverlapFunction(energies, a, eta)
    grid = np.asarray(grid, dtype=float)
    return OverlapFunction(grid, np.interp(grid, energies, a), eta)


def poisson_comb(s0: float, omega0: float, eta: float, energies: np.ndarray, n_max: int | None = None) -> np.ndarray:
    """Closed-form single sharp mode: Lorentzians at n * omega0 with Poisson weights."""
    from scipy.stats import poisson

    n_max = n_max or int(s0 + 10 * np.sqrt(s0) + 10)
    n = np.arange(n_max + 1)
    w = poisson.pmf(n, s0)
    e = np.asarray(energies, dtype=float)[:, None]
    return (w * (eta / np.pi) / ((e - n * omega0) ** 2 + eta**2)).sum(axis=1)


def isc_rate(lambda_soc: float, delta_if: float, overlap: OverlapFunction) -> float:
    """Golden-rule rate 2 pi / hbar * lambda^2 * A(delta) in MHz (lambda, delta in meV)."""
    a = float(overlap(delta_if))
    return 2 * np.pi * lambda_soc**2 * a * MEV_PER_HBAR / 1e6
