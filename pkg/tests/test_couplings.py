import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import pair_coupling_closed_form
from superrad.couplings import (
    CouplingMatrices,
    assign_wavevectors,
    build_matrices,
    diagonalize,
    green_coupling,
    green_tensor,
    spectral_scan,
)
from superrad.errors import (
    CoincidentPointError,
    InvalidArgumentError,
    NotPositiveSemidefiniteError,
    UnsupportedGeometryError,
)
from superrad.geometry import AtomArray, DisorderSpec, apply_disorder, build_chain, build_ring

coords = arrays(np.float64, 3, elements=st.floats(-2.0, 2.0))


@given(coords, coords)
def test_reciprocity_is_exact(a, b):
    if np.linalg.norm(a - b) < 1e-3:
        return
    assert green_coupling(a, b) == green_coupling(b, a)


@given(coords, coords)
def test_pair_coupling_matches_closed_form(a, b):
    dist = np.linalg.norm(a - b)
    if dist < 0.01:
        return
    np.testing.assert_allclose(green_coupling(a, b), pair_coupling_closed_form(a, b), atol=1e-12)


def test_green_tensor_is_symmetric_and_singular_at_origin():
    G = green_tensor(np.array([0.1, -0.3, 0.2]))
    np.testing.assert_allclose(G, G.T, atol=1e-15)
    with pytest.raises(CoincidentPointError):
        green_tensor(np.zeros(3))


def test_short_distance_series_is_continuous():
    # the small-separation expansion must join the exact expression smoothly
    from superrad.couplings import _SERIES_XI, K0

    for direction in (np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), np.array([0.6, 0.0, 0.8])):
        r = direction * _SERIES_XI / K0
        below = green_coupling(r * (1 - 1e-9), np.zeros(3))[1]
        above = green_coupling(r * (1 + 1e-9), np.zeros(3))[1]
        assert abs(below - above) < 1e-9
    assert green_coupling([0, 0, 1e-9], [0, 0, 0])[1] == pytest.approx(1.0, abs=1e-12)


def test_two_atom_eigenvalues_closed_form():
    jb = diagonalize(build_matrices(build_chain(2, 0.5)))
    g12 = 3.0 / (2.0 * np.pi**2)
    np.testing.assert_allclose(jb.rates, [1 + g12, 1 - g12], atol=1e-12)


@given(st.floats(0.05, 2.0))
def test_two_atom_rates_are_symmetric_antisymmetric_pair(d):
    m = build_matrices(build_chain(2, d))
    jb = diagonalize(m)
    g12 = m.Gamma[0, 1]
    np.testing.assert_allclose(sorted(jb.rates), sorted([1 + g12, 1 - g12]), atol=1e-12)


def _random_array(kind, n, d, seed):
    if kind == "chain":
        return build_chain(n, d)
    if kind == "ring":
        return build_ring(max(n, 2), d)
    return apply_disorder(build_chain(n + 4, d), DisorderSpec((0.05, 0.05, 0.02), n + 4, n, seed))


@given(st.sampled_from(["chain", "ring", "disordered"]), st.integers(2, 16),
       st.floats(0.05, 2.0), st.integers(0, 2**32))
def test_trace_identity_and_reconstruction(kind, n, d, seed):
    arr = _random_array(kind, n, d, seed)
    m = build_matrices(arr)
    m.check()
    jb = diagonalize(m)
    N = arr.n_atoms
    assert abs(jb.rates.sum() - N) < 1e-10 * N
    assert np.linalg.norm(jb.gamma_matrix() - m.Gamma) < 1e-9 * N
    np.testing.assert_allclose(jb.coefficients.T @ jb.coefficients, np.eye(N), atol=1e-10)
    assert np.all(np.diff(jb.rates) <= 1e-12)


def test_diagonalize_is_deterministic_for_degenerate_spectra():
    # a regular ring has doubly degenerate rates; the chosen basis must be reproducible
    m = build_matrices(build_ring(8, 0.3))
    a = diagonalize(m)
    b = diagonalize(CouplingMatrices(m.J.copy(), m.Gamma.copy()))
    assert np.array_equal(a.coefficients, b.coefficients)


def test_diagonalize_rejects_non_psd():
    G = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveSemidefiniteError):
        diagonalize(CouplingMatrices(np.zeros((2, 2)), G))
    with pytest.raises(InvalidArgumentError):
        diagonalize(CouplingMatrices(np.zeros((2, 2)), np.array([[1.0, 0.1], [0.2, 1.0]])))


def _rate_skew(d, n=10):
    """Positive when the largest outlier lies above Gamma0, negative when below."""
    dev = diagonalize(build_matrices(build_chain(n, d))).rates - 1.0
    return abs(dev.max()) - abs(dev.min())


def test_rate_extremes_flip_across_wavelength_resonance():
    assert _rate_skew(0.95) < 0 < _rate_skew(1.05)


def test_rate_extremes_superradiant_just_above_half_wavelength():
    # below lambda/2 the single bright mode still dominates at N=10, so only the upper side is checked
    assert _rate_skew(0.55) > 0


def test_wavevector_labels_for_chain():
    arr = build_chain(10, 0.9)
    jb = assign_wavevectors(diagonalize(build_matrices(arr)), arr)
    assert jb.k_labels.shape == (10,)
    assert np.all((jb.k_labels >= 0) & (jb.k_labels <= 0.5 / 0.9 + 1e-9))
    assert set(jb.parities) <= {"cosine", "sine"}
    assert np.all(jb.overlaps > 0.9)
    # the mirror parity of each column matches its cosine/sine label
    par = jb.mirror_parity()
    for p, fam in zip(par, jb.parities):
        assert p == (1 if fam == "cosine" else -1)


def test_wavevector_labels_need_chain():
    arr = build_ring(6, 0.3)
    with pytest.raises(UnsupportedGeometryError):
        assign_wavevectors(diagonalize(build_matrices(arr)), arr)


def test_spectral_scan_order_independent_of_jobs():
    a = spectral_scan("chain", [4, 6], [0.2, 0.7, 1.1], jobs=1)
    b = spectral_scan("chain", [4, 6], [0.2, 0.7, 1.1], jobs=2)
    assert np.array_equal(a, b)
    assert list(a["n"]) == [4, 4, 4, 6, 6, 6]
    with pytest.raises(InvalidArgumentError):
        spectral_scan("chain", [], [0.1])


def test_dissipative_matrix_bounds():
    arr = AtomArray(np.random.default_rng(3).normal(size=(7, 3)))
    m = build_matrices(arr)
    assert np.all(np.abs(m.Gamma) <= 1.0 + 1e-12)
    assert np.all(np.diag(m.Gamma) == 1.0) and np.all(np.diag(m.J) == 0.0)
