from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import lowering_ops
from superrad._moments import block_moments, moments_of, pure_moments
from superrad.couplings import build_matrices, diagonalize
from superrad.errors import BasisCoverageError, InvalidArgumentError
from superrad.geometry import build_chain, build_ring
from superrad.states import (
    DensityMatrix,
    ManyBodyState,
    SpinBasis,
    build_truncated_basis,
    coherent_spin_state,
    full_basis,
    fully_inverted,
    ground,
    pair_index,
)


@given(st.integers(1, 10), st.data())
def test_index_maps_are_mutually_inverse(n, data):
    h = data.draw(st.integers(0, n))
    b = SpinBasis(n, h)
    idx = np.arange(b.dim)
    assert np.array_equal(b.index_of[b.configs], idx)
    assert all(b.index(b.mask(i)) == i for i in range(0, b.dim, max(1, b.dim // 17)))
    assert b.dim == sum(comb(n, k) for k in range(h + 1))
    holes = n - b.excitations
    assert np.all(np.diff(holes) >= 0)


def test_basis_ordering_and_coverage():
    b = full_basis(4)
    assert b.mask(0) == 0b1111 and b.mask(b.dim - 1) == 0
    t = build_truncated_basis(4, 1)
    assert t.kind == "truncated" and t.dim == 5
    with pytest.raises(BasisCoverageError):
        t.index(0)
    with pytest.raises(BasisCoverageError):
        ground(t)
    with pytest.raises(InvalidArgumentError):
        SpinBasis(3, 4)


@given(st.integers(1, 9), st.floats(0.0, 1.0), st.floats(0.05, 1.5))
def test_coherent_state_is_binomial(n, phi, d):
    arr = build_chain(n, d)
    b = full_basis(n)
    psi = coherent_spin_state(phi, [0.1, 0.2, 1.0], arr, b)
    assert psi.norm2 == pytest.approx(1.0, abs=1e-12)
    pops = psi.sector_populations()
    for h, p in enumerate(pops):
        m = n - h
        assert p == pytest.approx(comb(n, m) * phi**m * (1 - phi) ** (n - m), abs=1e-12)


def test_coherent_state_phases():
    arr = build_chain(3, 0.25)
    b = full_basis(3)
    psi = coherent_spin_state(0.5, [0, 0, 1], arr, b)
    # single-excitation amplitude on atom j carries exp(i 2 pi z_j)
    for j in range(3):
        amp = psi.amplitudes[b.index(1 << j)]
        assert np.angle(amp) == pytest.approx(np.angle(np.exp(2j * np.pi * arr.z[j])), abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        coherent_spin_state(1.2, [0, 0, 1], arr, b)


@pytest.mark.parametrize("arr", [build_chain(6, 0.3), build_ring(5, 0.7)])
def test_single_excitation_states_from_jump_operators_are_orthonormal(arr):
    n = arr.n_atoms
    V = diagonalize(build_matrices(arr)).coefficients
    s = lowering_ops(n)
    g = np.zeros(1 << n)
    g[0] = 1.0
    states = np.array([sum(V[i, nu] * s[i].T @ g for i in range(n)) for nu in range(n)])
    np.testing.assert_allclose(states @ states.T, np.eye(n), atol=1e-10)


def _dense_moments(n, rho_bitmask):
    s = lowering_ops(n)
    c1 = np.array([[np.trace(rho_bitmask @ s[i].T @ s[j]) for j in range(n)] for i in range(n)])
    l, m = pair_index(n)
    P = len(l)
    c2 = np.zeros((P, P), dtype=complex)
    for p in range(P):
        for q in range(P):
            op = s[l[p]].T @ s[m[p]].T @ s[m[q]] @ s[l[q]]
            c2[p, q] = np.trace(rho_bitmask @ op)
    return c1, c2


@pytest.mark.parametrize("n", [3, 4])
def test_moments_match_dense_operators(n, rng):
    b = full_basis(n)
    amp = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    psi = ManyBodyState(b, amp / np.linalg.norm(amp))
    dense = np.zeros(1 << n, dtype=complex)
    dense[b.configs] = psi.amplitudes
    c1, c2 = _dense_moments(n, np.outer(dense, dense.conj()))
    m = pure_moments(b, psi.amplitudes, order=2)
    np.testing.assert_allclose(m.c1, c1, atol=1e-14)
    np.testing.assert_allclose(m.c2, c2, atol=1e-14)

    A = rng.normal(size=(b.dim, b.dim)) + 1j * rng.normal(size=(b.dim, b.dim))
    rho = A @ A.conj().T
    rho /= np.trace(rho)
    dm = DensityMatrix(b, rho)
    dm.check()
    rb = np.zeros((1 << n, 1 << n), dtype=complex)
    rb[np.ix_(b.configs, b.configs)] = rho
    c1, c2 = _dense_moments(n, rb)
    m = moments_of(dm, order=2)
    np.testing.assert_allclose(m.c1, c1, atol=1e-14)
    np.testing.assert_allclose(m.c2, c2, atol=1e-14)
    assert m.n_exc == pytest.approx(dm.excitation_number(), abs=1e-13)


def test_truncated_moments_include_first_missing_shell(rng):
    # c1 on a truncated basis must equal the full-basis value for a state supported in it
    n, h = 5, 2
    t = SpinBasis(n, h)
    f = full_basis(n)
    amp = rng.normal(size=t.dim) + 1j * rng.normal(size=t.dim)
    full_amp = np.zeros(f.dim, dtype=complex)
    full_amp[: t.dim] = amp
    a = pure_moments(t, amp, order=2)
    b = pure_moments(f, full_amp, order=2)
    np.testing.assert_allclose(a.c1, b.c1, atol=1e-14)
    np.testing.assert_allclose(a.c2, b.c2, atol=1e-14)
    blocks = [np.outer(amp[t.sector_slice(k)], amp[t.sector_slice(k)].conj()) for k in range(h + 1)]
    np.testing.assert_allclose(block_moments(t, blocks).c1, b.c1, atol=1e-14)


def test_inverted_and_ground_states():
    b = full_basis(4)
    assert fully_inverted(b).excitation_number() == 4
    assert ground(b).excitation_number() == 0
    with pytest.raises(InvalidArgumentError):
        ManyBodyState(b, np.zeros(3))
    with pytest.raises(ValueError):
        moments_of(moments_of(fully_inverted(b)), order=2)
