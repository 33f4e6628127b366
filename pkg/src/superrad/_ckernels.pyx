# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sector kernels for the collective-decay generator.

Rows of every operand are configurations of one hole sector; columns are
arbitrary (a second sector for density-matrix blocks, or 1 for vectors).
Operands must be C-contiguous complex128 arrays.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()

BACKEND = "cython"


cdef void _heff(const double complex[::1] diag,
                const int64_t[:, ::1] hop_src,
                const double complex[:, ::1] hop_coef,
                const double complex[:, ::1] X,
                double complex[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t nr = X.shape[0], m = X.shape[1], nh = hop_src.shape[1]
    cdef Py_ssize_t r, t, col, s
    cdef double complex c, dr
    for r in range(nr):
        dr = diag[r]
        for col in range(m):
            out[r, col] = dr * X[r, col]
        for t in range(nh):
            s = hop_src[r, t]
            c = hop_coef[r, t]
            for col in range(m):
                out[r, col] = out[r, col] + c * X[s, col]


cdef void _jump(const double[:, ::1] G,
                const int64_t[:, ::1] atoms_r, const int64_t[:, ::1] src_r,
                const int64_t[:, ::1] atoms_c, const int64_t[:, ::1] src_c,
                const double complex[:, ::1] src,
                double complex[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t nr = atoms_r.shape[0], nc = atoms_c.shape[0]
    cdef Py_ssize_t hr = atoms_r.shape[1], hc = atoms_c.shape[1]
    cdef Py_ssize_t r, c, a, b, j, sj
    cdef const double complex* row
    cdef const double* g
    cdef double complex acc
    # G is symmetric, so row j of G holds G[i, j] for all i
    for r in range(nr):
        for a in range(hr):
            j = atoms_r[r, a]
            sj = src_r[r, a]
            row = &src[sj, 0]
            g = &G[j, 0]
            for c in range(nc):
                acc = 0
                for b in range(hc):
                    acc = acc + g[atoms_c[c, b]] * row[src_c[c, b]]
                out[r, c] = out[r, c] + acc


cdef class SectorKernels:
    """Generator pieces for one coupling set on one spin basis.

    ``heff(h, X, out)`` writes ``H_eff X`` for rows in hole sector ``h``;
    ``jump(hr, hc, src, out)`` adds ``sum_ij G_ij s^j src s^i+`` where ``src``
    is the (hr-1, hc-1) block.
    """

    cdef public int n_atoms
    cdef list _diag, _hop_src, _hop_coef, _atoms, _src
    cdef const double[:, ::1] _G

    def __init__(self, tables):
        self.n_atoms = tables.n_atoms
        self._G = np.ascontiguousarray(tables.gamma, dtype=np.float64)
        self._diag = [np.ascontiguousarray(a) for a in tables.diag]
        self._hop_src = [np.ascontiguousarray(a) for a in tables.hop_src]
        self._hop_coef = [np.ascontiguousarray(a) for a in tables.hop_coef]
        self._atoms = [np.ascontiguousarray(a) for a in tables.hole_atoms]
        self._src = [np.ascontiguousarray(a) for a in tables.hole_src]

    def heff(self, int h, X, out):
        cdef const double complex[::1] diag = self._diag[h]
        cdef const int64_t[:, ::1] hs = self._hop_src[h]
        cdef const double complex[:, ::1] hc = self._hop_coef[h]
        cdef const double complex[:, ::1] xv = X
        cdef double complex[:, ::1] ov = out
        with nogil:
            _heff(diag, hs, hc, xv, ov)

    def jump(self, int hr, int hc, src, out):
        cdef const int64_t[:, ::1] ar = self._atoms[hr]
        cdef const int64_t[:, ::1] sr = self._src[hr]
        cdef const int64_t[:, ::1] ac = self._atoms[hc]
        cdef const int64_t[:, ::1] sc = self._src[hc]
        cdef const double complex[:, ::1] sv = src
        cdef double complex[:, ::1] ov = out
        with nogil:
            _jump(self._G, ar, sr, ac, sc, sv, ov)
