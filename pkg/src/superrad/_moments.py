"""Normally ordered one- and two-site moments from sector data.

``c1[i, j] = <s_eg^i s_ge^j>`` and, for atom pairs ``p = (l, m)``,
``c2[p, q] = <s_eg^l s_eg^m s_ge^m' s_ge^l'>``. Both are number conserving,
so only the sector-diagonal parts of a state enter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .states import DensityMatrix, ManyBodyState, SpinBasis


@dataclass
class Moments:
    c1: np.ndarray
    c2: Optional[np.ndarray] = None
    trace: float = 1.0
    n_exc: float = 0.0
    norm_deficit: float = 0.0

    @property
    def n_atoms(self) -> int:
        return self.c1.shape[0]


def _pad_vec(v):
    out = np.zeros(len(v) + 1, dtype=complex)
    out[:-1] = v
    return out


def _pad_mat(m):
    out = np.zeros((m.shape[0] + 1, m.shape[1] + 1), dtype=complex)
    out[:-1, :-1] = m
    return out


def _deepest(basis: SpinBasis, order: int) -> int:
    return min(basis.n_atoms, basis.max_holes + order)


def pure_moments(basis: SpinBasis, psi: np.ndarray, order: int = 1) -> Moments:
    n = basis.n_atoms
    parts = [psi[basis.sector_slice(h)] for h in range(basis.n_sectors)]
    c1 = np.zeros((n, n), dtype=complex)
    for h in range(1, _deepest(basis, 1) + 1):
        phi = _pad_vec(parts[h - 1])[basis.lowering_table(h)]
        c1 += phi.conj() @ phi.T
    c2 = None
    if order >= 2:
        P = n * (n - 1) // 2
        c2 = np.zeros((P, P), dtype=complex)
        for h in range(2, _deepest(basis, 2) + 1):
            phi = _pad_vec(parts[h - 2])[basis.pair_lowering_table(h)]
            c2 += phi.conj() @ phi.T
    p = np.abs(psi) ** 2
    tr = float(p.sum())
    return Moments(c1, c2, tr, float(p @ basis.excitations))


def block_moments(basis: SpinBasis, blocks, order: int = 1) -> Moments:
    """Moments from the sector-diagonal blocks ``blocks[h] = rho_{h,h}``."""
    n = basis.n_atoms
    c1 = np.zeros((n, n), dtype=complex)
    for h in range(1, _deepest(basis, 1) + 1):
        T = basis.lowering_table(h)
        R = _pad_mat(blocks[h - 1])
        c1 += R[T[:, None, :], T[None, :, :]].sum(-1).T
    c2 = None
    if order >= 2:
        P = n * (n - 1) // 2
        c2 = np.zeros((P, P), dtype=complex)
        for h in range(2, _deepest(basis, 2) + 1):
            T = basis.pair_lowering_table(h)
            R = _pad_mat(blocks[h - 2])
            for q in range(P):
                c2[:, q] += R[T[q][None, :], T].sum(-1)
    tr = 0.0
    nex = 0.0
    exc = basis.excitations
    for h in range(basis.n_sectors):
        d = np.real(np.diag(blocks[h]))
        tr += d.sum()
        nex += d @ exc[basis.sector_slice(h)]
    return Moments(c1, c2, float(tr), float(nex))


def moments_of(state, order: int = 1) -> Moments:
    """Moments of a pure state, density matrix, or pass-through ``Moments``."""
    if isinstance(state, Moments):
        if order >= 2 and state.c2 is None:
            raise ValueError("second-order moments were not recorded for this sample")
        return state
    if isinstance(state, ManyBodyState):
        m = pure_moments(state.basis, state.amplitudes, order)
        m.norm_deficit = state.norm_deficit
        return m
    if isinstance(state, DensityMatrix):
        b = state.basis
        blocks = [state.matrix[b.sector_slice(h), b.sector_slice(h)] for h in range(b.n_sectors)]
        m = block_moments(b, blocks, order)
        m.norm_deficit = state.norm_deficit
        return m
    raise TypeError(f"cannot take moments of {type(state).__name__}")
