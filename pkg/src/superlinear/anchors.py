"""Deterministic stride schedule of candidate anchors.

For query position ``i`` and exponent ``p`` the anchor with stride index
``s`` sits at ``i - round((s+1)**(1/p)) + 1``; generation stops at the first
negative position. At ``p = 0.5`` this gives ``i, i-3, i-8, i-15, ...``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateFit
from .fitting import fit_exponent


@dataclass(frozen=True)
class AnchorSet:
    query_pos: int
    anchors: tuple[int, ...]
    stride_indices: tuple[int, ...]

    def __len__(self):
        return len(self.anchors)


@lru_cache(maxsize=64)
def _offsets_upto(p: float, limit: int) -> np.ndarray:
    n = int(math.floor((limit + 1) ** p)) + 2
    off = np.rint(np.arange(1, n + 1, dtype=np.float64) ** (1.0 / p)).astype(np.int64)
    off = off[off <= limit]
    off.setflags(write=False)
    return off


def stride_offsets(p: float, max_pos: int) -> np.ndarray:
    """Offsets ``round((s+1)**(1/p))`` for every stride index usable at ``max_pos``.

    ``anchors(i)[s] == i - offsets[s] + 1`` for all ``s`` with
    ``offsets[s] <= i + 1``. The table is shared with the compiled kernels so
    both backends round identically.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"exponent must lie in (0, 1), got {p}")
    # Round the cache key up to a power of two to keep the cache small.
    limit = 1 << max(4, int(max_pos + 1).bit_length())
    off = _offsets_upto(float(p), limit)
    return off[: int(np.searchsorted(off, max_pos + 1, side="right"))]


def anchors(i: int, p: float) -> AnchorSet:
    """All anchors of query ``i``, descending, with their stride indices."""
    if i < 0:
        raise ValueError(f"query position must be non-negative, got {i}")
    off = stride_offsets(p, i)
    pos = (i + 1 - off).tolist()
    return AnchorSet(i, tuple(pos), tuple(range(len(pos))))


def anchor_count(i: int, p: float) -> int:
    return len(stride_offsets(p, i))


def max_gap(i: int, p: float) -> int:
    """Largest distance between consecutive anchors, counting the last anchor's distance to 0."""
    a = anchors(i, p).anchors
    gaps = [a[s] - a[s + 1] for s in range(len(a) - 1)]
    gaps.append(a[-1])
    return max(gaps)


def gap_bound(i: int, p: float) -> float:
    """Mean-value-theorem bound ``(1/p) * (S+1)**(1/p - 1)`` with ``S`` the largest stride index."""
    S = anchor_count(i, p) - 1
    return (1.0 / p) * (S + 1) ** (1.0 / p - 1.0)


def anchor_count_exponent_fit(lengths, p: float) -> float:
    """Log-log slope of ``|anchors(L-1, p)|`` against ``L``."""
    lengths = [int(L) for L in lengths]
    if len(lengths) < 2 or len(set(lengths)) < 2:
        raise DegenerateFit("need at least two distinct lengths")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise DegenerateFit("lengths must be strictly increasing")
    counts = [anchor_count(L - 1, p) for L in lengths]
    slope, _ = fit_exponent(lengths, counts, min_points=2)
    return slope
