"""Spin bases and many-body states.

Configurations are bitmasks with bit ``i`` set when atom ``i`` is excited.
Every basis, full or hole-truncated, is ordered by (number of holes,
bitmask), so the fully inverted configuration sits at index 0 and each
hole sector ``h`` occupies a contiguous index range.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .errors import BasisCoverageError, InvalidArgumentError
from .geometry import AtomArray

__all__ = [
    "SpinBasis",
    "ManyBodyState",
    "DensityMatrix",
    "full_basis",
    "build_truncated_basis",
    "fully_inverted",
    "ground",
    "coherent_spin_state",
    "sector_configs",
    "pair_index",
]

MAX_ATOMS = 24


def sector_configs(n: int, holes: int) -> np.ndarray:
    """Ascending bitmasks of ``n`` atoms with exactly ``holes`` ground atoms."""
    full = (1 << n) - 1
    masks = [full ^ sum(1 << i for i in c) for c in itertools.combinations(range(n), holes)]
    return np.array(sorted(masks), dtype=np.int64)


@functools.lru_cache(maxsize=None)
def pair_index(n: int):
    """Atom pairs ``(l, m)`` with ``l < m`` in lexicographic order."""
    iu, ju = np.triu_indices(n, 1)
    return iu.astype(np.int64), ju.astype(np.int64)


class SpinBasis:
    def __init__(self, n_atoms: int, max_holes: Optional[int] = None):
        n = int(n_atoms)
        if n < 1 or n > MAX_ATOMS:
            raise InvalidArgumentError(f"n_atoms must be in [1, {MAX_ATOMS}]")
        h = n if max_holes is None else int(max_holes)
        if not 0 <= h <= n:
            raise InvalidArgumentError("max_holes must lie in [0, n_atoms]")
        self.n_atoms = n
        self.max_holes = h
        self.sectors = [sector_configs(n, k) for k in range(h + 1)]
        bounds, start = [], 0
        for s in self.sectors:
            bounds.append((start, start + len(s)))
            start += len(s)
        self.sector_bounds = bounds
        self.configs = np.concatenate(self.sectors)
        self.dim = len(self.configs)
        self.index_of = np.full(1 << n, -1, dtype=np.int64)
        self.index_of[self.configs] = np.arange(self.dim)
        self.local_index = np.full(1 << n, -1, dtype=np.int64)
        for s in self.sectors:
            self.local_index[s] = np.arange(len(s))

    @property
    def kind(self) -> str:
        return "full" if self.max_holes == self.n_atoms else "truncated"

    @property
    def n_sectors(self) -> int:
        return len(self.sectors)

    def __repr__(self):
        return f"SpinBasis(n_atoms={self.n_atoms}, max_holes={self.max_holes}, dim={self.dim})"

    def __eq__(self, other):
        return (
            isinstance(other, SpinBasis)
            and other.n_atoms == self.n_atoms
            and other.max_holes == self.max_holes
        )

    def __hash__(self):
        return hash((self.n_atoms, self.max_holes))

    def __getstate__(self):
        return {"n_atoms": self.n_atoms, "max_holes": self.max_holes}

    def __setstate__(self, state):
        self.__init__(state["n_atoms"], state["max_holes"])

    def sector_slice(self, h: int) -> slice:
        a, b = self.sector_bounds[h]
        return slice(a, b)

    def index(self, mask: int) -> int:
        idx = int(self.index_of[mask]) if 0 <= mask < (1 << self.n_atoms) else -1
        if idx < 0:
            raise BasisCoverageError(f"configuration {mask:#b} is not in {self!r}")
        return idx

    def mask(self, index: int) -> int:
        return int(self.configs[index])

    @functools.cached_property
    def excitations(self) -> np.ndarray:
        return np.bitwise_count(self.configs.astype(np.uint64)).astype(np.int64)

    def shell_configs(self, h: int) -> np.ndarray:
        """Configurations with ``h`` holes, also for shells below the kept ones."""
        if h <= self.max_holes:
            return self.sectors[h]
        return sector_configs(self.n_atoms, h)

    def lowering_table(self, h: int) -> np.ndarray:
        """``T[i, r]``: local index in sector ``h-1`` of ``config_r | bit i``.

        Columns ``r`` run over the ``h``-hole shell (which may be the first
        shell outside a truncated basis); entries are -1 where atom ``i`` is
        already excited in ``config_r`` (sigma_ge^i gives nothing there).
        """
        return self._lowering(h)

    def pair_lowering_table(self, h: int) -> np.ndarray:
        """Like :meth:`lowering_table` for both atoms of each pair, into ``h-2``."""
        return self._pair_lowering(h)

    @functools.lru_cache(maxsize=None)
    def _lowering(self, h):
        if not 1 <= h <= min(self.n_atoms, self.max_holes + 1):
            raise InvalidArgumentError(f"no lowering table for shell {h}")
        cfg = self.shell_configs(h)
        bits = (np.int64(1) << np.arange(self.n_atoms, dtype=np.int64))[:, None]
        src = cfg[None, :] | bits
        table = self.local_index[src]
        table[(cfg[None, :] & bits) != 0] = -1
        return table

    @functools.lru_cache(maxsize=None)
    def _pair_lowering(self, h):
        if not 2 <= h <= min(self.n_atoms, self.max_holes + 2):
            raise InvalidArgumentError(f"no pair lowering table for shell {h}")
        cfg = self.shell_configs(h)
        l, m = pair_index(self.n_atoms)
        pair_bits = ((np.int64(1) << l) | (np.int64(1) << m))[:, None]
        src = cfg[None, :] | pair_bits
        table = self.local_index[src]
        table[(cfg[None, :] & pair_bits) != 0] = -1
        return table


def full_basis(n: int) -> SpinBasis:
    return SpinBasis(n, n)


def build_truncated_basis(n: int, max_holes: int) -> SpinBasis:
    return SpinBasis(n, max_holes)


@dataclass
class ManyBodyState:
    basis: SpinBasis
    amplitudes: np.ndarray
    norm_deficit: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dim,):
            raise InvalidArgumentError("amplitude vector does not match the basis")

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> "ManyBodyState":
        return ManyBodyState(self.basis, self.amplitudes / np.sqrt(self.norm2))

    def excitation_number(self) -> float:
        p = np.abs(self.amplitudes) ** 2
        return float(p @ self.basis.excitations / p.sum())

    def sector_populations(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return np.array([p[self.basis.sector_slice(h)].sum() for h in range(self.basis.n_sectors)])

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(self.basis, np.outer(a, a.conj()), self.norm_deficit)

    def to_csv_rows(self):
        return [
            (int(m), float(a.real), float(a.imag))
            for m, a in zip(self.basis.configs, self.amplitudes)
        ]


@dataclass
class DensityMatrix:
    basis: SpinBasis
    matrix: np.ndarray
    norm_deficit: float = 0.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (self.basis.dim, self.basis.dim):
            raise InvalidArgumentError("density matrix does not match the basis")

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def excitation_number(self) -> float:
        return float(np.real(np.diag(self.matrix)) @ self.basis.excitations / self.trace)

    def sector_populations(self) -> np.ndarray:
        p = np.real(np.diag(self.matrix))
        return np.array([p[self.basis.sector_slice(h)].sum() for h in range(self.basis.n_sectors)])

    def check(self, trace_tol=1e-9, herm_tol=1e-12, eig_tol=1e-9) -> None:
        rho = self.matrix
        if abs(self.trace + self.norm_deficit - 1.0) > trace_tol:
            raise InvalidArgumentError(f"trace {self.trace} + deficit != 1")
        if np.max(np.abs(rho - rho.conj().T), initial=0.0) > herm_tol:
            raise InvalidArgumentError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -eig_tol:
            raise InvalidArgumentError("density matrix has a negative eigenvalue")


def _unit(basis: SpinBasis, index: int) -> ManyBodyState:
    amp = np.zeros(basis.dim, dtype=complex)
    amp[index] = 1.0
    return ManyBodyState(basis, amp)


def fully_inverted(basis: SpinBasis) -> ManyBodyState:
    return _unit(basis, 0)


def ground(basis: SpinBasis) -> ManyBodyState:
    if basis.max_holes < basis.n_atoms:
        raise BasisCoverageError("the ground state lies outside a truncated basis")
    return _unit(basis, basis.dim - 1)


def coherent_spin_state(phi: float, k, array: AtomArray, basis: SpinBasis) -> ManyBodyState:
    """Product state with excitation probability ``phi`` and phases ``exp(i k.r)``.

    ``k`` is in units of k0. Needs the full basis.
    """
    if not 0.0 <= phi <= 1.0:
        raise InvalidArgumentError(f"phi={phi} outside [0, 1]")
    if basis.kind != "full":
        raise BasisCoverageError("coherent spin states need the full basis")
    if array.n_atoms != basis.n_atoms:
        raise InvalidArgumentError("array and basis sizes differ")
    phases = 2.0 * np.pi * (array.positions @ np.asarray(k, dtype=float))
    n = basis.n_atoms
    bits = ((basis.configs[:, None] >> np.arange(n)) & 1).astype(float)
    n_exc = basis.excitations
    amp = np.exp(1j * (bits @ phases)) * np.sqrt(phi) ** n_exc * np.sqrt(1.0 - phi) ** (n - n_exc)
    return ManyBodyState(basis, amp)
