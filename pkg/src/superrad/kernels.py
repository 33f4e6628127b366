"""Backend selection for the sector kernels.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``SUPERRAD_BACKEND=python`` is set) the scipy-sparse
implementation takes over. Both consume the same precomputed tables.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .states import SpinBasis

__all__ = ["KernelTables", "build_tables", "make_kernels", "BACKEND", "available_backends"]


@dataclass
class KernelTables:
    """Per-sector index tables in ELL layout.

    ``hop_src[h][r, t]`` is the within-sector source row for the ``t``-th
    (excited i, ground j) exchange of row ``r`` and ``hop_coef`` the matching
    ``M[i, j]``. ``hole_atoms[h][r]`` lists the ground atoms of row ``r`` and
    ``hole_src[h][r]`` the rows of sector ``h-1`` obtained by exciting them.
    """

    n_atoms: int
    gamma: np.ndarray
    diag: list
    hop_src: list
    hop_coef: list
    hole_atoms: list
    hole_src: list


def build_tables(basis: SpinBasis, effective: np.ndarray, gamma: np.ndarray) -> KernelTables:
    n = basis.n_atoms
    M = np.asarray(effective, dtype=complex)
    li = basis.local_index
    diag, hop_src, hop_coef, hole_atoms, hole_src = [], [], [], [], []
    atoms = np.arange(n, dtype=np.int64)
    for h, cfg in enumerate(basis.sectors):
        dim = len(cfg)
        bits = ((cfg[:, None] >> atoms) & 1).astype(bool)
        exc = np.nonzero(bits)[1].reshape(dim, n - h)
        gnd = np.nonzero(~bits)[1].reshape(dim, h)
        diag.append(np.ascontiguousarray(bits.astype(float) @ np.diag(M)))
        ii = np.repeat(exc, h, axis=1)
        jj = np.tile(gnd, (1, n - h))
        moved = cfg[:, None] ^ (np.int64(1) << ii) ^ (np.int64(1) << jj)
        hop_src.append(np.ascontiguousarray(li[moved], dtype=np.int64))
        hop_coef.append(np.ascontiguousarray(M[ii, jj]))
        hole_atoms.append(np.ascontiguousarray(gnd, dtype=np.int64))
        hole_src.append(np.ascontiguousarray(li[cfg[:, None] | (np.int64(1) << gnd)], dtype=np.int64))
    return KernelTables(n, np.array(gamma, dtype=float, order="C"), diag, hop_src, hop_coef,
                        hole_atoms, hole_src)


def _load():
    from . import _pykernels

    backends = {"python": _pykernels.SectorKernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        backends["cython"] = _ckernels.SectorKernels
    want = os.environ.get("SUPERRAD_BACKEND", "").strip().lower()
    if want in backends:
        return want, backends
    return ("cython" if "cython" in backends else "python"), backends


BACKEND, _BACKENDS = _load()


def available_backends() -> list:
    return sorted(_BACKENDS)


def make_kernels(basis: SpinBasis, effective, gamma, backend: str | None = None):
    """Kernel object for ``basis`` with site matrices ``effective`` and ``gamma``."""
    name = backend or BACKEND
    try:
        cls = _BACKENDS[name]
    except KeyError:
        raise InvalidArgumentError(f"backend {name!r} is not available; have {available_backends()}") from None
    return cls(build_tables(basis, effective, gamma))
