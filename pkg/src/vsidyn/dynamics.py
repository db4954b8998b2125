"""Ten-level Lindblad model: rates, drives, Liouvillian and propagation.

State index order (fixed project wide)::

    0-3  g, m_s = +3/2, +1/2, -1/2, -3/2
    4-7  e, m_s = +3/2, +1/2, -1/2, -3/2
    8    MS1
    9    MS2

Hamiltonians are in MHz (ordinary frequency) and enter the commutator with a
factor 2*pi. Rates are plain inverse microseconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .spincore import (
    D_EXCITED,
    D_GROUND,
    ManifoldHamiltonian,
    StrainParams,
    Transition,
    strain_hamiltonian,
    transition_energy_offset,
)

N_LEVELS = 10
G = (0, 1, 2, 3)
E = (4, 5, 6, 7)
MS1, MS2 = 8, 9
HALF = (1, 2)  # spin indices within a manifold
THREE_HALF = (0, 3)
TWO_PI = 2 * np.pi


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RateSet:
    """Optical and intersystem-crossing rates in MHz (1/us)."""

    gamma_r: float
    gamma_1: float
    gamma_1p: float
    gamma_2: float
    gamma_2p: float
    gamma_3: float
    gamma_4: float
    gamma_3p0: float = 0.0
    gamma_4p0: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"rate {f.name} must be finite and >= 0, got {v}")
        if self.beta > 1:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def big_gamma_1(self) -> float:
        return self.gamma_r + self.gamma_1 + self.gamma_1p

    @property
    def big_gamma_2(self) -> float:
        return self.gamma_r + self.gamma_2 + self.gamma_2p

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "RateSet":
        return replace(self, **changes)


@dataclass(frozen=True)
class DriveState:
    """Laser settings held constant over one pulse segment.

    Rabi frequencies and detunings are in MHz; ``offres_pump`` is the 730 nm
    incoherent pump rate. ``offres_gamma_3p``/``offres_gamma_4p`` optionally
    pin the MS2 decay rates during the segment, typically fitted values for
    the off-resonant laser (see :func:`ms2_decay_rates`). ``incoherent_a1``/``incoherent_a2`` replace a
    coherent drive by a two-way incoherent pump of one transition, the
    classical rate-equation picture of resonant excitation.
    """

    resonant_rabi_a1: float = 0.0
    resonant_rabi_a2: float = 0.0
    detuning_a1: float = 0.0
    detuning_a2: float = 0.0
    offres_pump: float = 0.0
    offres_gamma_3p: float | None = None
    offres_gamma_4p: float | None = None
    incoherent_a1: float = 0.0
    incoherent_a2: float = 0.0

    def __post_init__(self):
        for name in ("resonant_rabi_a1", "resonant_rabi_a2", "offres_pump", "incoherent_a1", "incoherent_a2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        for name in ("offres_gamma_3p", "offres_gamma_4p"):
            v = getattr(self, name)
            if v is not None and (not np.isfinite(v) or v < 0):
                raise ValueError(f"{name} must be >= 0, got {v}")

    @classmethod
    def resonant(cls, transition: Transition | str, rabi: float, detuning: float = 0.0) -> "DriveState":
        if Transition(transition) is Transition.A1:
            return cls(resonant_rabi_a1=rabi, detuning_a1=detuning)
        return cls(resonant_rabi_a2=rabi, detuning_a2=detuning)

    @property
    def is_dark(self) -> bool:
        return (
            self.resonant_rabi_a1 == 0
            and self.resonant_rabi_a2 == 0
            and self.offres_pump == 0
            and self.incoherent_a1 == 0
            and self.incoherent_a2 == 0
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DARK = DriveState()


@dataclass(frozen=True)
class ModelConfig:
    h_ground: ManifoldHamiltonian
    h_excited: ManifoldHamiltonian
    rates: RateSet
    efficiency: float = 1.0
    dark_rate: float = 0.0  # Hz
    strain: StrainParams | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if self.dark_rate < 0:
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")

    @classmethod
    def build(
        cls,
        rates: RateSet,
        strain: StrainParams | None = None,
        *,
        d_ground: float = D_GROUND,
        d_excited: float = D_EXCITED,
        excited_strain: StrainParams | None = None,
        efficiency: float = 1.0,
        dark_rate: float = 0.0,
    ) -> "ModelConfig":
        """Assemble a model; the excited manifold is unstrained unless told otherwise."""
        strain = strain or StrainParams()
        return cls(
            h_ground=strain_hamiltonian(d_ground, strain),
            h_excited=strain_hamiltonian(d_excited, excited_strain),
            rates=rates,
            efficiency=efficiency,
            dark_rate=dark_rate,
            strain=strain,
        )

    def with_rates(self, **changes) -> "ModelConfig":
        return replace(self, rates=replace(self.rates, **changes))

    @cached_property
    def _offsets(self) -> tuple[float, float]:
        return (
            transition_energy_offset(self.h_ground, self.h_excited, Transition.A1),
            transition_energy_offset(self.h_ground, self.h_excited, Transition.A2),
        )


def deshelling_rates(rates: RateSet, rabi_a1: float, rabi_a2: float) -> tuple[float, float]:
    """Laser-power dependent MS2 -> ground rates (gamma_3', gamma_4').

    Result of adiabatically eliminating MS3 and the excited states with an
    MS2 -> MS3 rate ``beta * (rabi_a1 + rabi_a2)``.
    """
    if rabi_a1 < 0 or rabi_a2 < 0:
        raise ValueError("Rabi frequencies must be >= 0")
    half_r = rates.beta * (rabi_a1 + rabi_a2) / 2
    g3 = rates.gamma_3p0 + half_r * (rabi_a1 + rates.gamma_r) / (rabi_a1 + rates.big_gamma_1)
    g4 = rates.gamma_4p0 + half_r * (rabi_a2 + rates.gamma_r) / (rabi_a2 + rates.big_gamma_2)
    return g3, g4


def ms2_decay_rates(rates: RateSet, drive: DriveState) -> tuple[float, float]:
    """MS2 -> ground rates active under ``drive``.

    The off-resonant pump excites both transitions at rate ``offres_pump`` and
    enters the deshelling law like a drive on each of them. Incoherent
    transition pumps count like Rabi frequencies. ``offres_gamma_3p`` and
    ``offres_gamma_4p`` replace the intrinsic plus off-resonant part with a
    fixed value; resonant contributions still add on top.
    """
    a1 = drive.resonant_rabi_a1 + drive.incoherent_a1
    a2 = drive.resonant_rabi_a2 + drive.incoherent_a2
    g3, g4 = deshelling_rates(rates, a1 + drive.offres_pump, a2 + drive.offres_pump)
    if drive.offres_gamma_3p is None and drive.offres_gamma_4p is None:
        return g3, g4
    r3, r4 = deshelling_rates(rates, a1, a2)
    if drive.offres_gamma_3p is not None:
        g3 = r3 - rates.gamma_3p0 + drive.offres_gamma_3p
    if drive.offres_gamma_4p is not None:
        g4 = r4 - rates.gamma_4p0 + drive.offres_gamma_4p
    return g3, g4


def transfer_matrix(cfg: ModelConfig, drive: DriveState) -> np.ndarray:
    """W[j, i] = rate of the incoherent jump |j><i| (one operator per entry)."""
    r = cfg.rates
    w = np.zeros((N_LEVELS, N_LEVELS))
    for k in range(4):
        w[G[k], E[k]] += r.gamma_r
    for k in HALF:
        w[MS1, E[k]] += r.gamma_1
        w[MS2, E[k]] += r.gamma_1p
    for k in THREE_HALF:
        w[MS1, E[k]] += r.gamma_2
        w[MS2, E[k]] += r.gamma_2p
    g3p, g4p = ms2_decay_rates(r, drive)
    for k in HALF:
        w[G[k], MS1] += r.gamma_3 / 2
        w[G[k], MS2] += g3p / 2
    for k in THREE_HALF:
        w[G[k], MS1] += r.gamma_4 / 2
        w[G[k], MS2] += g4p / 2
    pump = np.full(4, drive.offres_pump)
    pump[list(HALF)] += drive.incoherent_a1
    pump[list(THREE_HALF)] += drive.incoherent_a2
    for k in range(4):
        if pump[k] > 0:
            w[E[k], G[k]] += pump[k]
            w[G[k], E[k]] += pump[k]
    return w


def hamiltonian(cfg: ModelConfig, drive: DriveState) -> np.ndarray:
    """10x10 rotating-frame Hamiltonian in MHz.

    Each spin pair of the excited manifold sits in the frame of the laser
    addressing it (A1 for +-1/2, A2 for +-3/2). Excited-state couplings between
    the two pairs oscillate at roughly the excited splitting in that frame and
    are dropped. Metastable levels carry zero energy.
    """
    off_a1, off_a2 = cfg._offsets
    h = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    h[:4, :4] = cfg.h_ground.matrix
    he = cfg.h_excited.matrix
    for pair, shift in ((HALF, off_a1 + drive.detuning_a1), (THREE_HALF, off_a2 + drive.detuning_a2)):
        idx = np.ix_(pair, pair)
        h[4:8, 4:8][idx] = he[idx] + shift * np.eye(2)
    for k in HALF:
        h[G[k], E[k]] = h[E[k], G[k]] = drive.resonant_rabi_a1 / 2
    for k in THREE_HALF:
        h[G[k], E[k]] = h[E[k], G[k]] = drive.resonant_rabi_a2 / 2
    return h


def _dissipator_superop(w: np.ndarray) -> np.ndarray:
    n = w.shape[0]
    out_rate = w.sum(axis=0)
    damp = -0.5 * (out_rate[:, None] + out_rate[None, :])
    d = np.diag(damp.reshape(-1)).astype(complex)
    diag_idx = np.arange(n) * (n + 1)
    d[np.ix_(diag_idx, diag_idx)] += w
    return d


def liouvillian(cfg: ModelConfig, drive: DriveState) -> np.ndarray:
    """Superoperator acting on row-major vec(rho), units 1/us."""
    h = hamiltonian(cfg, drive)
    eye = np.eye(N_LEVELS)
    coherent = -1j * TWO_PI * (np.kron(h, eye) - np.kron(eye, h.T))
    return coherent + _dissipator_superop(transfer_matrix(cfg, drive))


def lindblad_rhs(rho: np.ndarray, cfg: ModelConfig, drive: DriveState) -> np.ndarray:
    """d(rho)/dt from the explicit commutator and jump-operator sums."""
    rho = np.asarray(rho, dtype=complex)
    h = hamiltonian(cfg, drive)
    out = -1j * TWO_PI * (h @ rho - rho @ h)
    w = transfer_matrix(cfg, drive)
    for j, i in zip(*np.nonzero(w)):
        # L = |j><i| at rate w: w (L rho L^+ - 1/2 {L^+ L, rho})
        rate = w[j, i]
        out[j, j] += rate * rho[i, i]
        out[i, :] -= 0.5 * rate * rho[i, :]
        out[:, i] -= 0.5 * rate * rho[:, i]
    return out


def reachable_indices(cfg: ModelConfig, seed: np.ndarray | None = None) -> np.ndarray:
    """vec(rho) indices reachable from the diagonal under any drive of this model.

    The sparsity pattern uses unit rates with every laser on, so the subspace
    is closed under all generators built from ``cfg``.
    """
    unit = RateSet(*(1.0,) * 7, gamma_3p0=1.0, gamma_4p0=1.0, beta=0.0)
    probe_cfg = replace(cfg, rates=unit)
    drive = DriveState(1.0, 1.0, 0.0, 0.0, 1.0)
    pattern = np.abs(liouvillian(probe_cfg, drive)) > 0
    n = N_LEVELS
    start = set(range(0, n * n, n + 1))
    if seed is not None:
        start |= set(np.flatnonzero(np.abs(np.asarray(seed).reshape(-1)) > 0).tolist())
    seen, stack = set(start), list(start)
    while stack:
        j = stack.pop()
        for i in np.flatnonzero(pattern[:, j]):
            if i not in seen:
                seen.add(int(i))
                stack.append(int(i))
    return np.array(sorted(seen))


class Simulator:
    """Exact piecewise-constant propagation restricted to the reachable subspace.

    Generators, step matrices and integrated propagators are cached per drive,
    so repeated segments cost one matrix-vector product.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.space = reachable_indices(cfg)
        self._gen: dict[DriveState, np.ndarray] = {}
        self._steps: dict[tuple, np.ndarray] = {}
        self._ints: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._eig: dict[DriveState, tuple] = {}
        self.pl_row = pl_functional(cfg)[self.space]

    def to_vec(self, rho: np.ndarray) -> np.ndarray:
        flat = np.asarray(rho, dtype=complex).reshape(-1)
        outside = np.delete(flat, self.space)
        if outside.size and np.abs(outside).max() > 0:
            raise ValueError("initial state has coherences outside the model's reachable subspace")
        return flat[self.space].copy()

    def to_rho(self, vec: np.ndarray) -> np.ndarray:
        flat = np.zeros(N_LEVELS * N_LEVELS, dtype=complex)
        flat[self.space] = vec
        return flat.reshape(N_LEVELS, N_LEVELS)

    def generator(self, drive: DriveState) -> np.ndarray:
        if drive not in self._gen:
            full = liouvillian(self.cfg, drive)
            self._gen[drive] = np.ascontiguousarray(full[np.ix_(self.space, self.space)])
        return self._gen[drive]

    def step_matrix(self, drive: DriveState, t: float) -> np.ndarray:
        key = (drive, float(t))
        if key not in self._steps:
            self._steps[key] = expm(self.generator(drive) * float(t))
        return self._steps[key]

    def integrated(self, drive: DriveState, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(exp(L t), integral_0^t exp(L s) ds) from one augmented exponential."""
        key = (drive, float(t))
        if key not in self._ints:
            gen = self.generator(drive)
            n = gen.shape[0]
            aug = np.zeros((2 * n, 2 * n), dtype=complex)
            aug[:n, :n] = gen
            aug[:n, n:] = np.eye(n)
            big = expm(aug * float(t))
            self._ints[key] = (big[:n, :n], big[:n, n:])
        return self._ints[key]

    def evolve(self, vec: np.ndarray, drive: DriveState, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("duration must be >= 0")
        if t == 0:
            return vec
        out = self.step_matrix(drive, t) @ vec
        if not np.all(np.isfinite(out)):
            raise PropagationError("non-finite density matrix")
        return out

    def evolve_many(self, vec: np.ndarray, drive: DriveState, times) -> np.ndarray:
        """States at several times (rows), via one eigendecomposition when possible."""
        times = np.asarray(times, dtype=float)
        if drive not in self._eig:
            w, v = np.linalg.eig(self.generator(drive))
            cond = np.linalg.cond(v)
            self._eig[drive] = (w, v, np.linalg.inv(v)) if cond < 1e8 else None
        dec = self._eig[drive]
        if dec is None:
            return np.array([self.evolve(vec, drive, t) for t in times])
        w, v, vinv = dec
        coeff = vinv @ vec
        return (np.exp(np.outer(times, w)) * coeff) @ v.T

    def emitted(self, vec: np.ndarray, drive: DriveState, t: float) -> tuple[np.ndarray, float]:
        """Final state and PL integrated over the segment (counts, no dark counts)."""
        p, integral = self.integrated(drive, t)
        return p @ vec, float(np.real(self.pl_row @ (integral @ vec)))

    def pl(self, vec: np.ndarray) -> np.ndarray | float:
        return np.real(vec @ self.pl_row) if np.ndim(vec) > 1 else float(np.real(self.pl_row @ vec))


def max_timescale_step(cfg: ModelConfig, drive: DriveState) -> float:
    """RK4 step that resolves the fastest rate and the largest Hamiltonian frequency."""
    w = transfer_matrix(cfg, drive)
    gamma_max = max(w.sum(axis=0).max(), 1e-12)
    f_max = max(np.abs(np.linalg.eigvalsh(hamiltonian(cfg, drive))).max(), 1e-12)
    return min(0.05 / gamma_max, 0.05 / (TWO_PI * f_max))


def propagate(
    rho0: np.ndarray,
    cfg: ModelConfig,
    drive: DriveState,
    duration: float,
    dt_max: float | None = None,
    method: str = "expm",
) -> np.ndarray:
    """Evolve rho0 for ``duration`` microseconds under a constant drive.

    ``method="expm"`` uses the exact superoperator exponential; ``"rk4"``
    integrates with fixed fourth-order Runge-Kutta steps no longer than
    ``dt_max``. No trace renormalisation is applied in either case.
    """
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    rho0 = np.asarray(rho0, dtype=complex)
    if duration == 0:
        return rho0.copy()
    if method == "expm":
        vec = expm(liouvillian(cfg, drive) * duration) @ rho0.reshape(-1)
        rho = vec.reshape(N_LEVELS, N_LEVELS)
    elif method == "rk4":
        limit = max_timescale_step(cfg, drive)
        dt_max = limit if dt_max is None else min(dt_max, limit)
        if not dt_max > 1e-9:
            raise PropagationError(f"step size underflow (dt_max={dt_max:g} us)")
        n_steps = int(np.ceil(duration / dt_max))
        dt = duration / n_steps
        gen = liouvillian(cfg, drive)
        vec = rho0.reshape(-1)
        for _ in range(n_steps):
            k1 = gen @ vec
            k2 = gen @ (vec + 0.5 * dt * k1)
            k3 = gen @ (vec + 0.5 * dt * k2)
            k4 = gen @ (vec + dt * k3)
            vec = vec + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = vec.reshape(N_LEVELS, N_LEVELS)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(rho)):
        raise PropagationError("non-finite density matrix")
    return rho


def pl_rate(rho: np.ndarray, cfg: ModelConfig) -> float:
    """Detected photoluminescence in counts/us, dark counts included."""
    excited = np.real(np.trace(np.asarray(rho)[4:8, 4:8]))
    return cfg.efficiency * cfg.rates.gamma_r * excited + cfg.dark_rate * 1e-6


def pl_functional(cfg: ModelConfig) -> np.ndarray:
    """Row vector f with f @ vec(rho) = emitted PL (no dark counts)."""
    f = np.zeros(N_LEVELS * N_LEVELS)
    for k in E:
        f[k * (N_LEVELS + 1)] = cfg.efficiency * cfg.rates.gamma_r
    return f


# -- state constructors and checks ----------------------------------------


def basis_state(index: int) -> np.ndarray:
    rho = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    rho[index, index] = 1.0
    return rho


def mixed_ground() -> np.ndarray:
    rho = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    rho[:4, :4] = np.eye(4) / 4
    return rho


def populations(rho: np.ndarray) -> np.ndarray:
    return np.real(np.diag(rho)).copy()


def check_density_matrix(rho: np.ndarray, *, herm_tol=1e-10, trace_tol=1e-9, pos_tol=1e-9) -> None:
    rho = np.asarray(rho)
    if rho.shape != (N_LEVELS, N_LEVELS):
        raise ValueError(f"density matrix must be {N_LEVELS}x{N_LEVELS}")
    if np.abs(rho - rho.conj().T).max() > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"density matrix trace {tr} != 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -pos_tol:
        raise ValueError("density matrix has negative eigenvalues")
