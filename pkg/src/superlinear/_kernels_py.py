"""Pure-Python implementations of the hot loops.

Semantics are identical to ``_kernels.pyx``; the compiled module is used
when available and this one otherwise. All position arithmetic is integer,
driven by precomputed stride-offset and extent tables, so both backends
produce bit-identical integer results.
"""

import numpy as np
from scipy.signal import lfilter

BACKEND = "python"


def _window_counts(i, off, w):
    """(# anchors of i, # anchors of i inside the window)."""
    n_all = int(np.searchsorted(off, i + 1, side="right"))
    if w <= 0:
        return n_all, 0
    return n_all, int(np.searchsorted(off, min(w, i + 1), side="right"))


def audit_range(L, off, back, fwd, w, exclude_window):
    off = np.asarray(off, dtype=np.int64)
    offl = off.tolist()
    n_all = 0
    n_off = len(offl)
    for i in range(L):
        while n_all < n_off and offl[n_all] <= i + 1:
            n_all += 1
        B = int(back[i])
        F = int(fwd[i])
        if w > 0:
            wlo = i - w + 1 if i - w + 1 > 0 else 0
            need = wlo - 1
        else:
            wlo = i + 1
            need = i
        if need < 0:
            continue
        for s in range(n_all):
            t = i + 1 - offl[s]
            if exclude_window and t >= wlo:
                continue
            hi = t + F if t + F < i else i
            if hi < need:
                break
            lo = t - B
            if lo - 1 < need:
                need = lo - 1
                if need < 0:
                    break
        if need >= 0:
            return i
    return -1


def _union_size(intervals):
    intervals.sort()
    total = 0
    cur_lo, cur_hi = intervals[0]
    for lo, hi in intervals[1:]:
        if lo > cur_hi + 1:
            total += cur_hi - cur_lo + 1
            cur_lo, cur_hi = lo, hi
        elif hi > cur_hi:
            cur_hi = hi
    return total + cur_hi - cur_lo + 1


def route_geometry(positions, off, back, fwd, w, k, u):
    """Content-free routing: pick ``min(k, n)`` candidates by sparse Fisher-Yates on ``u``.

    Returns ``(n_candidates, keys_attended, selected)``; ``selected`` holds
    the chosen anchor positions in draw order, ``(len(positions), k)``,
    padded with -1.
    """
    positions = np.asarray(positions, dtype=np.int64)
    off = np.asarray(off, dtype=np.int64)
    m = len(positions)
    n_cand = np.zeros(m, dtype=np.int64)
    keys = np.zeros(m, dtype=np.int64)
    sel = np.full((m, k), -1, dtype=np.int64)
    offl = off.tolist()
    ul = np.asarray(u, dtype=np.float64).tolist()
    for q, i in enumerate(positions.tolist()):
        n_all, cw = _window_counts(i, off, w)
        n = n_all - cw
        n_cand[q] = n
        B = int(back[i])
        F = int(fwd[i])
        intervals = []
        if w > 0:
            intervals.append((i - w + 1 if i - w + 1 > 0 else 0, i))
        kk = k if k < n else n
        swaps = {}
        row = ul[q]
        for j in range(kk):
            r = j + int(row[j] * (n - j))
            if r >= n:
                r = n - 1
            c = swaps.get(r, r)
            swaps[r] = swaps.get(j, j)
            t = i + 1 - offl[cw + c]
            lo = t - B if t - B > 0 else 0
            hi = t + F if t + F < i else i
            sel[q, j] = t
            intervals.append((lo, hi))
        keys[q] = _union_size(intervals) if intervals else 0
    return n_cand, keys, sel


def linear_scan(U, decay):
    """``H[:, t] = decay * H[:, t-1] + U[:, t]`` along axis 1 of a (B, L, d) array."""
    U = np.asarray(U, dtype=np.float64)
    decay = np.asarray(decay, dtype=np.float64)
    H = np.empty_like(U)
    for c in range(U.shape[2]):
        H[:, :, c] = lfilter([1.0], [1.0, -decay[c]], U[:, :, c], axis=1)
    return H
