import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.stats import unitary_group

from vsidyn.presets import STRAIN_TABLE1
from vsidyn.spincore import (
    StrainParams,
    Transition,
    build_spin_operators,
    general_strain_matrix,
    ground_eigenstates,
    odmr_frequency,
    rotating_frame,
    strain_hamiltonian,
)

OPS = build_spin_operators()
finite = st.floats(-40, 40, allow_nan=False)
angle = st.floats(-np.pi, np.pi, allow_nan=False)


def test_sz_diagonal():
    assert np.allclose(np.diag(OPS.sz).real, [1.5, 0.5, -0.5, -1.5])


def test_raising_coefficient():
    assert OPS.s_plus[0, 1] == pytest.approx(np.sqrt(3))


def test_commutators_and_casimir():
    sx, sy, sz = OPS.sx, OPS.sy, OPS.sz
    assert np.abs(sx @ sy - sy @ sx - 1j * sz).max() < 1e-12
    assert np.abs(sy @ sz - sz @ sy - 1j * sx).max() < 1e-12
    assert np.abs(sz @ sx - sx @ sz - 1j * sy).max() < 1e-12
    assert np.abs(sx @ sx + sy @ sy + sz @ sz - 3.75 * np.eye(4)).max() < 1e-12
    assert np.array_equal(OPS.s_plus, sx + 1j * sy)
    assert np.array_equal(OPS.s_minus, sx - 1j * sy)


def test_operators_are_read_only():
    with pytest.raises(ValueError):
        OPS.sz[0, 0] = 0


@pytest.mark.parametrize("bad", [dict(pi_1=-1.0), dict(pi_2=-0.1), dict(theta=np.pi), dict(theta=-0.1), dict(pi_z=np.nan)])
def test_strain_params_reject(bad):
    with pytest.raises(ValueError):
        StrainParams(**bad)


def test_unstrained_odmr_is_70():
    assert odmr_frequency(strain_hamiltonian(70.0)) == 70.0


def test_axial_shift():
    assert odmr_frequency(strain_hamiltonian(70.0, StrainParams(pi_z=1.51))) == pytest.approx(73.02, abs=1e-12)


def test_degenerate_manifold_gap_zero():
    assert odmr_frequency(strain_hamiltonian(0.0)) == 0.0


def test_table1_odmr_matches_direct_diagonalisation():
    h = strain_hamiltonian(70.0, STRAIN_TABLE1)
    ops = OPS
    s = STRAIN_TABLE1
    direct = (
        (35 + s.pi_z) * ops.sz @ ops.sz
        + s.pi_1 / 2 * (ops.s_plus @ ops.sz + ops.sz @ ops.s_plus + ops.s_minus @ ops.sz + ops.sz @ ops.s_minus)
        + s.pi_2 / 2 * (np.exp(-1j * s.theta) * ops.s_plus @ ops.s_plus + np.exp(1j * s.theta) * ops.s_minus @ ops.s_minus)
    )
    ev = np.sort(np.linalg.eigvalsh(direct))
    assert odmr_frequency(h) == pytest.approx(ev[2:].mean() - ev[:2].mean(), abs=1e-12)
    assert odmr_frequency(h) > 70


def test_unstrained_eigenvectors_are_basis_states():
    es = ground_eigenstates(strain_hamiltonian(70.0))
    assert np.allclose(np.abs(es.vectors) ** 2 @ np.ones(4), 1)
    assert np.allclose(np.sort(np.abs(es.vectors).max(axis=0)), 1)
    assert es.labels.count("1/2") == 2 and es.labels.count("3/2") == 2


def test_pi2_mixes_three_half_with_opposite_half():
    es = ground_eigenstates(strain_hamiltonian(70.0, StrainParams(pi_2=5.0)))
    low = es.vectors[:, 0]
    # +-3/2 couples to -+1/2 under S+^2
    assert abs(low[0]) > 0 and abs(low[2]) > 0 or abs(low[3]) > 0 and abs(low[1]) > 0
    assert np.all(es.weights[:, 0] < 1) and np.all(es.weights[:, 1] > 0)


def test_rotating_frame_blocks():
    hg, he = strain_hamiltonian(70.0, STRAIN_TABLE1), strain_hamiltonian(1000.0)
    rf = rotating_frame(hg, he, 12.0, 3.0, "A1")
    assert np.abs(rf.matrix - rf.matrix.conj().T).max() == 0
    assert np.array_equal(rf.matrix[:4, :4], hg.matrix)
    assert np.allclose(rf.matrix[4:, 4:], he.matrix + 12.0 * np.eye(4))
    assert rf.matrix[1, 5] == 1.5 and rf.matrix[2, 6] == 1.5 and rf.matrix[0, 4] == 0


def test_rotating_frame_undriven_and_negative():
    hg, he = strain_hamiltonian(70.0), strain_hamiltonian(1000.0)
    rf = rotating_frame(hg, he, 0.0, 0.0, Transition.A2)
    assert not rf.matrix[:4, 4:].any()
    with pytest.raises(ValueError):
        rotating_frame(hg, he, 0.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0, 20), st.floats(0, 20), st.floats(0, np.pi, exclude_max=True))
def test_hamiltonian_hermitian(d, pz, p1, p2, th):
    h = strain_hamiltonian(d, StrainParams(pz, p1, p2, th)).matrix
    assert np.abs(h - h.conj().T).max() < 1e-12


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, angle, finite, angle, angle)
def test_phase_rotation_law(d, pz, p1, t1, p2, t2, phi):
    h = general_strain_matrix(d, pz, p1, t1, p2, t2)
    u = expm(-1j * phi * OPS.sz)
    rotated = u @ h @ u.conj().T
    assert np.abs(rotated - general_strain_matrix(d, pz, p1, t1 + phi, p2, t2 + 2 * phi)).max() < 1e-10


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, angle, finite, angle)
def test_flip_law_and_sign_invariant_spectrum(d, pz, p1, t1, p2, t2):
    h = general_strain_matrix(d, pz, p1, t1, p2, t2)
    ux = expm(-1j * np.pi * OPS.sx)
    flipped = ux @ h @ ux.conj().T
    assert np.abs(flipped - general_strain_matrix(d, pz, -p1, -t1, p2, -t2)).max() < 1e-10
    ev = np.linalg.eigvalsh(h)
    ev_neg = np.linalg.eigvalsh(general_strain_matrix(d, pz, -p1, t1, -p2, t2))
    assert np.abs(ev - ev_neg).max() < 1e-10


def test_odmr_invariant_under_unitary_basis_change():
    h = strain_hamiltonian(70.0, STRAIN_TABLE1).matrix
    for seed in range(5):
        u = unitary_group.rvs(4, random_state=seed)
        assert odmr_frequency(u @ h @ u.conj().T) == pytest.approx(odmr_frequency(h), abs=1e-10)


def test_canonical_folding_preserves_spectrum():
    raw = (1.2, -2.0, -3.0, 4.0)
    can = StrainParams.canonical(*raw)
    ev_raw = np.linalg.eigvalsh(general_strain_matrix(35.0, raw[0], raw[1], 0.0, raw[2], raw[3]))
    ev_can = np.linalg.eigvalsh(strain_hamiltonian(70.0, can).matrix)
    assert np.allclose(ev_raw, ev_can, atol=1e-10)
