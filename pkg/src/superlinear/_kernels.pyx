# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; mirror of ``_kernels_py`` with identical semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _count_le(const cnp.int64_t[::1] off, cnp.int64_t x) noexcept nogil:
    # number of entries <= x in an ascending table
    cdef Py_ssize_t lo = 0, hi = off.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if off[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def audit_range(Py_ssize_t L, off, back, fwd, Py_ssize_t w, bint exclude_window):
    cdef const cnp.int64_t[::1] o = np.ascontiguousarray(off, dtype=np.int64)
    cdef const cnp.int64_t[::1] bk = np.ascontiguousarray(back, dtype=np.int64)
    cdef const cnp.int64_t[::1] fw = np.ascontiguousarray(fwd, dtype=np.int64)
    cdef Py_ssize_t n_off = o.shape[0]
    cdef Py_ssize_t i, s, n_all = 0
    cdef cnp.int64_t t, lo, hi, need, wlo, B, F
    cdef Py_ssize_t first = -1
    with nogil:
        for i in range(L):
            while n_all < n_off and o[n_all] <= i + 1:
                n_all += 1
            B = bk[i]
            F = fw[i]
            if w > 0:
                wlo = i - w + 1
                if wlo < 0:
                    wlo = 0
                need = wlo - 1
            else:
                wlo = i + 1
                need = i
            if need < 0:
                continue
            for s in range(n_all):
                t = i + 1 - o[s]
                if exclude_window and t >= wlo:
                    continue
                hi = t + F
                if hi > i:
                    hi = i
                if hi < need:
                    break
                lo = t - B
                if lo - 1 < need:
                    need = lo - 1
                    if need < 0:
                        break
            if need >= 0:
                first = i
                break
    return first


def route_geometry(positions, off, back, fwd, Py_ssize_t w, Py_ssize_t k, u):
    cdef const cnp.int64_t[::1] pos = np.ascontiguousarray(positions, dtype=np.int64)
    cdef const cnp.int64_t[::1] o = np.ascontiguousarray(off, dtype=np.int64)
    cdef const cnp.int64_t[::1] bk = np.ascontiguousarray(back, dtype=np.int64)
    cdef const cnp.int64_t[::1] fw = np.ascontiguousarray(fwd, dtype=np.int64)
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t m = pos.shape[0]
    n_cand_a = np.zeros(m, dtype=np.int64)
    keys_a = np.zeros(m, dtype=np.int64)
    sel_a = np.full((m, k), -1, dtype=np.int64)
    cdef cnp.int64_t[::1] n_cand = n_cand_a
    cdef cnp.int64_t[::1] keys = keys_a
    cdef cnp.int64_t[:, ::1] sel = sel_a
    # scratch: sparse swap map (2k entries) and k+1 intervals
    cdef cnp.int64_t[::1] skey = np.empty(2 * k + 2, dtype=np.int64)
    cdef cnp.int64_t[::1] sval = np.empty(2 * k + 2, dtype=np.int64)
    cdef cnp.int64_t[::1] ilo = np.empty(k + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] ihi = np.empty(k + 1, dtype=np.int64)
    cdef Py_ssize_t q, j, a, b, nsw, nint, kk
    cdef cnp.int64_t i, n_all, cw, n, r, c, vj, t, lo, hi, B, F, tl, th, total, cl, ch
    cdef bint found
    with nogil:
        for q in range(m):
            i = pos[q]
            n_all = _count_le(o, i + 1)
            cw = 0
            if w > 0:
                cw = _count_le(o, w if w < i + 1 else i + 1)
            n = n_all - cw
            n_cand[q] = n
            B = bk[i]
            F = fw[i]
            nint = 0
            if w > 0:
                ilo[0] = i - w + 1 if i - w + 1 > 0 else 0
                ihi[0] = i
                nint = 1
            kk = k if k < n else n
            nsw = 0
            for j in range(kk):
                r = j + <cnp.int64_t>floor(uu[q, j] * (n - j))
                if r >= n:
                    r = n - 1
                # c = swaps.get(r, r); vj = swaps.get(j, j)
                c = r
                vj = j
                for a in range(nsw):
                    if skey[a] == r:
                        c = sval[a]
                    if skey[a] == j:
                        vj = sval[a]
                found = False
                for a in range(nsw):
                    if skey[a] == r:
                        sval[a] = vj
                        found = True
                        break
                if not found:
                    skey[nsw] = r
                    sval[nsw] = vj
                    nsw += 1
                t = i + 1 - o[cw + c]
                lo = t - B
                if lo < 0:
                    lo = 0
                hi = t + F
                if hi > i:
                    hi = i
                sel[q, j] = t
                ilo[nint] = lo
                ihi[nint] = hi
                nint += 1
            if nint == 0:
                keys[q] = 0
                continue
            # insertion sort by (lo, hi)
            for a in range(1, nint):
                tl = ilo[a]
                th = ihi[a]
                b = a - 1
                while b >= 0 and (ilo[b] > tl or (ilo[b] == tl and ihi[b] > th)):
                    ilo[b + 1] = ilo[b]
                    ihi[b + 1] = ihi[b]
                    b -= 1
                ilo[b + 1] = tl
                ihi[b + 1] = th
            total = 0
            cl = ilo[0]
            ch = ihi[0]
            for a in range(1, nint):
                if ilo[a] > ch + 1:
                    total += ch - cl + 1
                    cl = ilo[a]
                    ch = ihi[a]
                elif ihi[a] > ch:
                    ch = ihi[a]
            keys[q] = total + ch - cl + 1
    return n_cand_a, keys_a, sel_a


def linear_scan(U, decay):
    cdef const double[:, :, ::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(decay, dtype=np.float64)
    H_a = np.empty((u.shape[0], u.shape[1], u.shape[2]), dtype=np.float64)
    cdef double[:, :, ::1] H = H_a
    cdef Py_ssize_t b, t, c
    with nogil:
        for b in range(u.shape[0]):
            for c in range(u.shape[2]):
                H[b, 0, c] = u[b, 0, c]
            for t in range(1, u.shape[1]):
                for c in range(u.shape[2]):
                    H[b, t, c] = g[c] * H[b, t - 1, c] + u[b, t, c]
    return H_a
