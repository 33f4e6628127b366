"""Dipole-dipole couplings and collective jump operators.

Units: rates in the single-atom decay rate, lengths in the transition
wavelength (so the free-space wave number is ``2*pi``). The transition
dipole is the circular ``sigma+`` vector ``(x + i y)/sqrt(2)``.

The pair coupling is ``J_ij - i Gamma_ij / 2 = -(3 pi / k0) d* . G0 . d``
with the free-space dyadic propagator

    G0(r) = exp(i k r) / (4 pi k^2 r^3)
            * [(k^2 r^2 + i k r - 1) 1 + (3 - 3 i k r - k^2 r^2) r^ r^]

whose prefactor makes the coincident-point dissipative term equal to one.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    CoincidentPointError,
    InvalidArgumentError,
    NotPositiveSemidefiniteError,
    UnsupportedGeometryError,
)
from .geometry import AtomArray, build_chain, build_ring

K0 = 2.0 * np.pi
DIPOLE = np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)

# below this k0*r the dissipative part is taken from its Taylor series to
# avoid the 1/xi^3 cancellation
_SERIES_XI = 5e-2

__all__ = [
    "CouplingMatrices",
    "JumpBasis",
    "green_coupling",
    "green_tensor",
    "build_matrices",
    "diagonalize",
    "assign_wavevectors",
    "spectral_scan",
    "K0",
]


@dataclass(frozen=True)
class CouplingMatrices:
    J: np.ndarray
    Gamma: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.Gamma.shape[0]

    @property
    def effective(self) -> np.ndarray:
        """Site matrix ``J - i Gamma / 2`` of the non-Hermitian Hamiltonian."""
        return self.J - 0.5j * self.Gamma

    def check(self, tol: float = 1e-12) -> None:
        J, G = self.J, self.Gamma
        n = G.shape[0]
        if not (np.allclose(J, J.T, rtol=0, atol=tol) and np.allclose(G, G.T, rtol=0, atol=tol)):
            raise InvalidArgumentError("coupling matrices are not symmetric")
        if np.any(np.abs(G) > 1.0 + tol):
            raise InvalidArgumentError("|Gamma_ij| exceeds the single-atom rate")
        lo = np.linalg.eigvalsh(G).min()
        if lo < -1e-10 * n:
            raise NotPositiveSemidefiniteError(f"smallest Gamma eigenvalue {lo:.3e}")


@dataclass(frozen=True)
class JumpBasis:
    """Eigen-decomposition of the dissipative matrix.

    Column ``nu`` of ``coefficients`` defines the collective lowering
    operator ``O_nu = sum_i V[i, nu] sigma_ge^i`` with rate ``rates[nu]``.
    ``k_labels`` are in units of k0; ``parities`` are ``"cosine"`` or
    ``"sine"`` (mirror even / odd about the chain centre).
    """

    rates: np.ndarray
    coefficients: np.ndarray
    k_labels: Optional[np.ndarray] = None
    parities: Optional[tuple] = None
    overlaps: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_atoms(self) -> int:
        return len(self.rates)

    def gamma_matrix(self) -> np.ndarray:
        V = self.coefficients
        return (V * self.rates) @ V.T

    def mirror_parity(self, tol: float = 1e-6) -> np.ndarray:
        """+1 / -1 when column is even / odd under index reversal, else 0."""
        V = self.coefficients
        out = np.zeros(V.shape[1], dtype=int)
        for nu in range(V.shape[1]):
            v = V[:, nu]
            if np.allclose(v[::-1], v, atol=tol):
                out[nu] = 1
            elif np.allclose(v[::-1], -v, atol=tol):
                out[nu] = -1
        return out


def green_tensor(r: np.ndarray, k: float = K0) -> np.ndarray:
    """Free-space dyadic Green's function for separation vector ``r``."""
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise CoincidentPointError("Green's function is singular at r = 0")
    rhat = r / dist
    kr = k * dist
    pref = np.exp(1j * kr) / (4.0 * np.pi * k**2 * dist**3)
    return pref * (
        (kr**2 + 1j * kr - 1.0) * np.eye(3)
        + (3.0 - 3.0j * kr - kr**2) * np.outer(rhat, rhat)
    )


def _dissipative_series(xi, s):
    # Taylor series of (2/3) * Gamma for small xi; s = |rhat . d|^2
    x2 = xi * xi
    f1 = 2.0 / 3 - x2 * (2.0 / 15 - x2 * (1.0 / 140 - x2 * (1.0 / 5670 - x2 / 399168)))
    f2 = x2 * (1.0 / 15 - x2 * (1.0 / 210 - x2 * (1.0 / 7560 - x2 / 498960)))
    return 1.5 * (f1 + s * f2)


def green_coupling(r_i, r_j) -> tuple[float, float]:
    """Return ``(J_ij, Gamma_ij)`` for emitters at ``r_i`` and ``r_j``."""
    r = np.asarray(r_i, dtype=float) - np.asarray(r_j, dtype=float)
    dist = float(np.linalg.norm(r))
    if dist == 0.0:
        raise CoincidentPointError("coincident emitters have no pair coupling")
    g = -(3.0 * np.pi / K0) * (DIPOLE.conj() @ green_tensor(r) @ DIPOLE)
    J, Gamma = float(g.real), float(-2.0 * g.imag)
    xi = K0 * dist
    if xi < _SERIES_XI:
        s = 0.5 * (r[0] ** 2 + r[1] ** 2) / dist**2
        Gamma = float(_dissipative_series(xi, s))
    return J, Gamma


def _pair_couplings(positions: np.ndarray):
    """Vectorised ``green_coupling`` over all pairs i < j."""
    n = len(positions)
    iu, ju = np.triu_indices(n, 1)
    r = positions[iu] - positions[ju]
    dist = np.linalg.norm(r, axis=1)
    if np.any(dist == 0.0):
        raise CoincidentPointError("duplicate emitter positions")
    rhat = r / dist[:, None]
    xi = K0 * dist
    # d* . (rhat rhat) . d = |rhat . d|^2 because rhat is real
    s = np.abs(rhat @ DIPOLE) ** 2
    g = -0.75 * np.exp(1j * xi) / xi**3 * (
        (xi**2 + 1j * xi - 1.0) + (3.0 - 3.0j * xi - xi**2) * s
    )
    J = g.real
    Gamma = -2.0 * g.imag
    small = xi < _SERIES_XI
    if np.any(small):
        Gamma[small] = _dissipative_series(xi[small], s[small])
    return iu, ju, J, Gamma


def build_matrices(array: AtomArray) -> CouplingMatrices:
    n = array.n_atoms
    J = np.zeros((n, n))
    G = np.eye(n)
    if n > 1:
        iu, ju, Jp, Gp = _pair_couplings(array.positions)
        J[iu, ju] = Jp
        J[ju, iu] = Jp
        G[iu, ju] = Gp
        G[ju, iu] = Gp
    J.setflags(write=False)
    G.setflags(write=False)
    return CouplingMatrices(J, G)


def _canonical_block(Q: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis for span(Q).

    Coordinate vectors are projected onto the subspace in lexicographic
    order and Gram-Schmidt orthonormalised; the first ``m`` independent
    ones are kept.
    """
    n, m = Q.shape
    out = []
    for idx in range(n):
        v = Q @ Q[idx]  # projection of e_idx
        for u in out:
            v = v - (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            out.append(v / norm)
            if len(out) == m:
                break
    return np.column_stack(out)


def diagonalize(matrices: CouplingMatrices, degeneracy_tol: Optional[float] = None) -> JumpBasis:
    """Real symmetric eigendecomposition of Gamma, rates sorted descending."""
    G = np.asarray(matrices.Gamma, dtype=float)
    n = G.shape[0]
    if not np.allclose(G, G.T, rtol=0, atol=1e-12):
        raise InvalidArgumentError("Gamma must be symmetric")
    w, V = np.linalg.eigh(G)
    clamp = 1e-10 * n
    if w.min() < -clamp:
        raise NotPositiveSemidefiniteError(
            f"Gamma has eigenvalue {w.min():.3e} below -{clamp:.1e}"
        )
    w = np.where(w < 0.0, 0.0, w)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]

    tol = 1e-9 * max(1.0, n) if degeneracy_tol is None else degeneracy_tol
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and abs(w[stop] - w[start]) <= tol:
            stop += 1
        if stop - start > 1:
            V[:, start:stop] = _canonical_block(V[:, start:stop])
        start = stop

    for nu in range(n):
        col = V[:, nu]
        pivot = np.argmax(np.abs(col) - 1e-12 * np.arange(n))
        if col[pivot] < 0:
            V[:, nu] = -col
    return JumpBasis(w, V)


def _ansatz_overlap(v, zc, k, family):
    f = np.cos(k * zc) if family == "cosine" else np.sin(k * zc)
    norm = np.linalg.norm(f)
    if norm < 1e-12:
        return 0.0
    return abs(v @ f) / norm


def assign_wavevectors(basis: JumpBasis, array: AtomArray, n_grid: int = 2001) -> JumpBasis:
    """Label each jump operator by its best-fit standing wave.

    Each eigenvector is compared with ``cos(k (z - zc))`` and
    ``sin(k (z - zc))`` (``zc`` the chain centre) for k in [0, pi/d];
    the k and family with the largest normalised overlap win.
    """
    if not array.is_chain or array.n_atoms < 2:
        raise UnsupportedGeometryError("wave-vector labels need a chain of >= 2 atoms")
    z = array.z
    d = float(np.min(np.diff(z)))
    zc = z - 0.5 * (z[0] + z[-1])
    kmax = np.pi / d
    grid = np.linspace(0.0, kmax, n_grid)
    labels, parities, overlaps = [], [], []
    for nu in range(basis.n_atoms):
        v = basis.coefficients[:, nu]
        best = (-1.0, 0.0, "cosine")
        for family in ("cosine", "sine"):
            vals = np.array([_ansatz_overlap(v, zc, k, family) for k in grid])
            i = int(np.argmax(vals))
            lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
            res = minimize_scalar(
                lambda k: -_ansatz_overlap(v, zc, k, family),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-10},
            )
            k_best, ov = (res.x, -res.fun) if -res.fun >= vals[i] else (grid[i], vals[i])
            if ov > best[0] + 1e-12:
                best = (ov, k_best, family)
        overlaps.append(best[0])
        labels.append(best[1] / K0)
        parities.append(best[2])
    return replace(
        basis,
        k_labels=np.array(labels),
        parities=tuple(parities),
        overlaps=np.array(overlaps),
    )


def _geometry(family: str, n: int, d: float) -> AtomArray:
    if family == "chain":
        return build_chain(n, d)
    if family == "ring":
        return build_ring(n, d)
    raise InvalidArgumentError(f"unknown geometry family {family!r}")


def _scan_point(args):
    family, n, d = args
    G = build_matrices(_geometry(family, n, d)).Gamma
    w = np.linalg.eigvalsh(G)
    return (n, d, float(w[-1]), float(w[0]))


def spectral_scan(
    family: str,
    n_values: Iterable[int],
    d_values: Iterable[float],
    jobs: int = 1,
) -> np.ndarray:
    """Extreme Gamma eigenvalues over an (N, d) grid.

    Returns a structured array with fields ``n, d, gamma_max, gamma_min``
    in row-major (N outer, d inner) order regardless of ``jobs``.
    """
    n_values = [int(n) for n in n_values]
    d_values = [float(d) for d in d_values]
    if not n_values or not d_values:
        raise InvalidArgumentError("spectral scan needs non-empty N and d ranges")
    points = [(family, n, d) for n in n_values for d in d_values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scan_point, points, chunksize=8))
    else:
        rows = [_scan_point(p) for p in points]
    dtype = [("n", int), ("d", float), ("gamma_max", float), ("gamma_min", float)]
    return np.array(rows, dtype=dtype)
