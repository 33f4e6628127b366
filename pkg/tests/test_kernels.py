import numpy as np
import pytest

from conftest import lowering_ops
from superrad.errors import InvalidArgumentError
from superrad.kernels import BACKEND, available_backends, make_kernels
from superrad.states import SpinBasis

BACKENDS = available_backends()


def _random_couplings(n, rng):
    J = rng.normal(size=(n, n))
    J = J + J.T
    np.fill_diagonal(J, 0.0)
    A = rng.normal(size=(n, n))
    G = A @ A.T / n
    return J - 0.5j * G, G


def test_compiled_backend_is_default_when_built():
    assert BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n, holes", [(4, None), (5, 2), (6, 3)])
def test_kernels_match_dense_operators(backend, n, holes, rng):
    basis = SpinBasis(n, holes)
    M, G = _random_couplings(n, rng)
    K = make_kernels(basis, M, G, backend)
    s = lowering_ops(n)
    heff = sum(M[i, j] * s[i].T @ s[j] for i in range(n) for j in range(n))
    cfg = [np.asarray(sec) for sec in basis.sectors]
    for a in range(basis.n_sectors):
        X = rng.normal(size=(len(cfg[a]), 3)) + 1j * rng.normal(size=(len(cfg[a]), 3))
        out = np.empty_like(X)
        K.heff(a, np.ascontiguousarray(X), out)
        np.testing.assert_allclose(out, heff[np.ix_(cfg[a], cfg[a])] @ X, atol=1e-12)
    for a in range(1, basis.n_sectors):
        for c in range(1, basis.n_sectors):
            src = rng.normal(size=(len(cfg[a - 1]), len(cfg[c - 1]))) + 0j
            src = np.ascontiguousarray(src + 1j * rng.normal(size=src.shape))
            out = np.zeros((len(cfg[a]), len(cfg[c])), dtype=complex)
            K.jump(a, c, src, out)
            ref = np.zeros_like(out)
            for i in range(n):
                for j in range(n):
                    Lj = s[j][np.ix_(cfg[a], cfg[a - 1])]
                    Li = s[i][np.ix_(cfg[c], cfg[c - 1])]
                    ref += G[i, j] * Lj @ src @ Li.T
            np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
def test_backends_agree_bitwise_close(rng):
    basis = SpinBasis(7, None)
    M, G = _random_couplings(7, rng)
    ks = [make_kernels(basis, M, G, b) for b in BACKENDS]
    for h in range(basis.n_sectors):
        d = len(basis.sectors[h])
        X = np.ascontiguousarray(rng.normal(size=(d, d)) + 0j)
        outs = []
        for K in ks:
            o = np.empty_like(X)
            K.heff(h, X, o)
            outs.append(o)
        np.testing.assert_allclose(outs[0], outs[1], rtol=1e-13, atol=1e-13)


def test_unknown_backend_rejected():
    basis = SpinBasis(3)
    M, G = _random_couplings(3, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        make_kernels(basis, M, G, "fortran")
