"""Spin-3/2 operator algebra and the spin-strain Hamiltonian.

All Hamiltonian entries are ordinary frequencies in MHz. The basis is
ordered (+3/2, +1/2, -1/2, -3/2) throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

M_S = np.array([1.5, 0.5, -0.5, -1.5])

#: Observable ground-state splitting of an unstrained centre (MHz).
D_GROUND = 70.0
#: Approximate excited-state splitting (MHz).
D_EXCITED = 1000.0


class Transition(str, Enum):
    A1 = "A1"  # g,±1/2 <-> e,±1/2
    A2 = "A2"  # g,±3/2 <-> e,±3/2

    @property
    def spin_indices(self) -> tuple[int, int]:
        return (1, 2) if self is Transition.A1 else (0, 3)


@dataclass(frozen=True)
class SpinOperators:
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray


@lru_cache(maxsize=1)
def build_spin_operators() -> SpinOperators:
    s = 1.5
    sp = np.zeros((4, 4), dtype=complex)
    for col in range(1, 4):
        m = M_S[col]
        sp[col - 1, col] = np.sqrt(s * (s + 1) - m * (m + 1))
    sm = sp.conj().T
    ops = SpinOperators(
        sx=(sp + sm) / 2,
        sy=(sp - sm) / 2j,
        sz=np.diag(M_S).astype(complex),
        s_plus=sp,
        s_minus=sm,
    )
    for arr in (ops.sx, ops.sy, ops.sz, ops.s_plus, ops.s_minus):
        arr.flags.writeable = False
    return ops


@dataclass(frozen=True)
class StrainParams:
    """Phenomenological spin-strain couplings in MHz (theta in radians)."""

    pi_z: float = 0.0
    pi_1: float = 0.0
    pi_2: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not np.isfinite([self.pi_z, self.pi_1, self.pi_2, self.theta]).all():
            raise ValueError("strain parameters must be finite")
        if self.pi_1 < 0 or self.pi_2 < 0:
            raise ValueError(f"transverse strain must be >= 0, got pi_1={self.pi_1}, pi_2={self.pi_2}")
        if not 0.0 <= self.theta < np.pi:
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")

    @classmethod
    def canonical(cls, pi_z: float, pi_1: float, pi_2: float, theta: float) -> "StrainParams":
        """Fold arbitrary signed couplings into the canonical domain.

        The spectrum and all m_s populations are unchanged by the folding
        (flipping pi_1 is a z-rotation by pi; theta -> -theta is complex
        conjugation of the Hamiltonian).
        """
        if pi_1 < 0:
            pi_1 = -pi_1  # U_phi with phi = pi
        if pi_2 < 0:
            pi_2, theta = -pi_2, theta + np.pi
        theta = float(np.mod(theta, 2 * np.pi))
        if theta >= np.pi:
            theta = 2 * np.pi - theta
        # theta = pi is not equivalent to 0; keep it just inside the open bound
        theta = min(theta, float(np.nextafter(np.pi, 0.0)))
        return cls(pi_z, pi_1, pi_2, theta)

    def as_dict(self) -> dict:
        return {"pi_z": self.pi_z, "pi_1": self.pi_1, "pi_2": self.pi_2, "theta": self.theta}


@dataclass(frozen=True)
class ManifoldHamiltonian:
    matrix: np.ndarray = field(repr=False)
    d_zfs: float

    def __post_init__(self):
        if self.matrix.shape != (4, 4):
            raise ValueError("manifold Hamiltonian must be 4x4")
        if np.abs(self.matrix - self.matrix.conj().T).max() > 1e-12:
            raise ValueError("manifold Hamiltonian is not Hermitian")


def general_strain_matrix(
    d_prime: float, pi_z: float, pi_1: float, theta_1: float, pi_2: float, theta_2: float
) -> np.ndarray:
    """Two-phase strain Hamiltonian before fixing theta_1; signed couplings allowed.

    ``d_prime`` multiplies Sz^2 directly (it is half the observable splitting).
    """
    ops = build_spin_operators()
    sp, sz = ops.s_plus, ops.sz
    h = (d_prime + pi_z) * (sz @ sz)
    t1 = 0.5 * pi_1 * np.exp(-1j * theta_1) * (sp @ sz + sz @ sp)
    t2 = 0.5 * pi_2 * np.exp(-1j * theta_2) * (sp @ sp)
    return h + t1 + t1.conj().T + t2 + t2.conj().T


def strain_hamiltonian(splitting: float, strain: StrainParams | None = None) -> ManifoldHamiltonian:
    """Manifold Hamiltonian for an observable zero-field splitting in MHz.

    The Sz^2 prefactor is ``splitting / 2 + pi_z`` so an unstrained manifold
    shows a gap of exactly ``splitting`` and pure axial strain shifts it by
    ``2 * pi_z``.
    """
    if strain is None:
        strain = StrainParams()
    elif not isinstance(strain, StrainParams):
        raise TypeError("strain must be a StrainParams instance")
    mat = general_strain_matrix(splitting / 2.0, strain.pi_z, strain.pi_1, 0.0, strain.pi_2, strain.theta)
    return ManifoldHamiltonian(matrix=mat, d_zfs=splitting)


def odmr_frequency(h: ManifoldHamiltonian | np.ndarray) -> float:
    """Gap between the upper and lower Kramers pair, in MHz."""
    mat = h.matrix if isinstance(h, ManifoldHamiltonian) else np.asarray(h)
    ev = np.linalg.eigvalsh(mat)
    return float(abs(ev[2:].mean() - ev[:2].mean()))


@dataclass(frozen=True)
class Eigenstructure:
    energies: np.ndarray
    vectors: np.ndarray  # columns are eigenvectors
    weights: np.ndarray  # weights[k] = (|1/2| weight, |3/2| weight) of eigenvector k
    labels: tuple[str, ...]  # "1/2" or "3/2"


def ground_eigenstates(h: ManifoldHamiltonian | np.ndarray) -> Eigenstructure:
    """Eigen-decomposition with each eigenvector labelled by its dominant |m_s|.

    Ties go to |m_s| = 1/2.
    """
    mat = h.matrix if isinstance(h, ManifoldHamiltonian) else np.asarray(h)
    ev, vec = np.linalg.eigh(mat)
    pop = np.abs(vec) ** 2
    w_half = pop[1] + pop[2]
    w_three = pop[0] + pop[3]
    labels = tuple("3/2" if w3 > wh else "1/2" for wh, w3 in zip(w_half, w_three))
    return Eigenstructure(ev, vec, np.column_stack([w_half, w_three]), labels)


def transition_energy_offset(h_g: ManifoldHamiltonian, h_e: ManifoldHamiltonian, transition: Transition) -> float:
    """E_g - E_e for the addressed spin pair (mean over the Kramers pair).

    Adding this to the excited block brings the laser onto resonance.
    """
    gs = ground_eigenstates(h_g)
    es = ground_eigenstates(h_e)
    want = "1/2" if transition is Transition.A1 else "3/2"
    eg = np.mean([e for e, lab in zip(gs.energies, gs.labels) if lab == want] or [gs.energies.mean()])
    ee = np.mean([e for e, lab in zip(es.energies, es.labels) if lab == want] or [es.energies.mean()])
    return float(eg - ee)


@dataclass(frozen=True)
class RotatingFrameHamiltonian:
    matrix: np.ndarray = field(repr=False)
    detuning: float
    rabi: float
    target_transition: Transition


def rotating_frame(
    h_g: ManifoldHamiltonian,
    h_e: ManifoldHamiltonian,
    detuning: float,
    rabi: float,
    transition: Transition | str = Transition.A1,
) -> RotatingFrameHamiltonian:
    """8x8 single-laser Hamiltonian (ground block first, then excited).

    ``detuning`` is the laser detuning delta_L entering ``H_e + delta_L * 1``.
    Use :func:`transition_energy_offset` to obtain the value that makes the
    chosen transition resonant.
    """
    if rabi < 0:
        raise ValueError(f"rabi frequency must be >= 0, got {rabi}")
    transition = Transition(transition)
    mat = np.zeros((8, 8), dtype=complex)
    mat[:4, :4] = h_g.matrix
    mat[4:, 4:] = h_e.matrix + detuning * np.eye(4)
    for k in transition.spin_indices:
        mat[k, 4 + k] = mat[4 + k, k] = rabi / 2
    return RotatingFrameHamiltonian(mat, detuning, rabi, transition)
