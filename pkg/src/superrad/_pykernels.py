"""Pure-Python sector kernels built on scipy sparse matrices."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

BACKEND = "python"


class SectorKernels:
    """Same interface as the compiled class; see ``_ckernels.pyx``."""

    def __init__(self, tables):
        self.n_atoms = n = tables.n_atoms
        G = tables.gamma
        self._H = []
        self._L = []  # per sector: list over atoms j of (dim_h, dim_{h-1}) lowering pickers
        self._K = []  # per sector: list over atoms j of sum_i G_ij L_i
        dims = [len(d) for d in tables.diag]
        for h, dim in enumerate(dims):
            rows = np.repeat(np.arange(dim), tables.hop_src[h].shape[1])
            H = sp.csr_matrix(
                (tables.hop_coef[h].ravel(), (rows, tables.hop_src[h].ravel())), shape=(dim, dim)
            )
            self._H.append((H + sp.diags(tables.diag[h])).tocsr())
            if h == 0:
                self._L.append(None)
                self._K.append(None)
                continue
            atoms = tables.hole_atoms[h]
            srcs = tables.hole_src[h]
            r = np.repeat(np.arange(dim), h)
            Ls = []
            for j in range(n):
                sel = atoms.ravel() == j
                Ls.append(
                    sp.csr_matrix(
                        (np.ones(sel.sum()), (r[sel], srcs.ravel()[sel])), shape=(dim, dims[h - 1])
                    )
                )
            self._L.append(Ls)
            self._K.append([sum(G[i, j] * Ls[i] for i in range(n)).tocsr() for j in range(n)])

    def heff(self, h, X, out):
        out[...] = self._H[h] @ X

    def jump(self, hr, hc, src, out):
        Lr, Kc = self._L[hr], self._K[hc]
        acc = np.zeros(out.shape, dtype=complex)
        for j in range(self.n_atoms):
            left = Lr[j] @ src
            acc += (Kc[j] @ left.T).T
        out += acc
