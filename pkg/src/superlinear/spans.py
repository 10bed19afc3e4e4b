"""Span construction around anchors, window merging and coverage audits.

Every anchor ``t`` of query ``i`` owns the candidate span
``[max(0, t - floor(b*l(i))), min(i, t + floor(f*l(i)))]`` with base length
``l(i) = ceil(i**span_exponent)``. A query is *covered* when the union of all
candidate spans plus the local window contains every key ``0..i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .anchors import anchors, stride_offsets
from .config import AttnConfig
from .errors import AnchorOutOfRange

# Relative slack for snapping i**p to a nearby integer before ceil().
_SNAP = 1e-9


@dataclass(frozen=True)
class Span:
    lo: int
    hi: int
    anchor: int

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi):
            raise ValueError(f"invalid span [{self.lo}, {self.hi}]")

    def __len__(self):
        return self.hi - self.lo + 1

    def indices(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    def __contains__(self, j):
        return self.lo <= j <= self.hi


@dataclass
class SpanSet:
    query_pos: int
    spans: list[Span]
    window: Optional[Span]
    merged_indices_count: list[int] = field(default_factory=list)


@dataclass
class CoverageReport:
    query_pos: int
    covered: bool
    uncovered_positions: list[int]


def base_span_length(i: int, p_sp: float) -> int:
    """``ceil(i**p_sp)``, at least 1."""
    if i <= 1:
        return 1
    v = float(i) ** p_sp
    r = round(v)
    if abs(v - r) <= _SNAP * v:
        return max(1, int(r))
    return max(1, math.ceil(v))


def span_length_table(n: int, p_sp: float) -> np.ndarray:
    """``base_span_length(i, p_sp)`` for ``i in range(n)`` as an int64 array."""
    i = np.arange(n, dtype=np.float64)
    v = i ** p_sp
    r = np.rint(v)
    snapped = np.where(np.abs(v - r) <= _SNAP * v, r, np.ceil(v))
    out = np.maximum(snapped, 1.0).astype(np.int64)
    out[: min(n, 2)] = 1
    return out


def _extent(factor: float, ell):
    return np.floor(factor * ell + _SNAP)


def extents(i: int, cfg: AttnConfig) -> tuple[int, int]:
    """Backward and forward offsets ``floor(b*l(i))``, ``floor(f*l(i))``."""
    ell = base_span_length(i, cfg.span_exponent)
    return int(_extent(cfg.backward_factor, ell)), int(_extent(cfg.forward_factor, ell))


def extent_tables(n: int, cfg: AttnConfig) -> tuple[np.ndarray, np.ndarray]:
    ell = span_length_table(n, cfg.span_exponent).astype(np.float64)
    back = _extent(cfg.backward_factor, ell).astype(np.int64)
    fwd = _extent(cfg.forward_factor, ell).astype(np.int64)
    return back, fwd


def build_span(i: int, anchor: int, cfg: AttnConfig) -> Span:
    if anchor < 0 or anchor > i:
        raise AnchorOutOfRange(f"anchor {anchor} outside [0, {i}]")
    back, fwd = extents(i, cfg)
    return Span(max(0, anchor - back), min(i, anchor + fwd), anchor)


def window_span(i: int, w: int) -> Optional[Span]:
    """Local causal window ``[max(0, i-w+1), i]``; ``None`` when ``w == 0``."""
    if w <= 0:
        return None
    return Span(max(0, i - w + 1), i, i)


def dedup_concat(span: Span, window: Optional[Span]) -> np.ndarray:
    """Ascending, duplicate-free union of a span and an optional window."""
    if window is None:
        return span.indices()
    a, b = sorted([(span.lo, span.hi), (window.lo, window.hi)])
    if b[0] <= a[1] + 1:
        return np.arange(a[0], max(a[1], b[1]) + 1, dtype=np.int64)
    return np.concatenate([np.arange(a[0], a[1] + 1), np.arange(b[0], b[1] + 1)]).astype(np.int64)


def union_size(ranges: Sequence[tuple[int, int]]) -> int:
    """Number of integers in a union of inclusive ranges."""
    total, cur_lo, cur_hi = 0, None, None
    for lo, hi in sorted(ranges):
        if cur_hi is None or lo > cur_hi + 1:
            if cur_hi is not None:
                total += cur_hi - cur_lo + 1
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo + 1
    return total


def candidate_anchors(i: int, cfg: AttnConfig) -> list[int]:
    """Anchors of ``i`` outside the window; the set the router scores."""
    W = window_span(i, cfg.window)
    a = anchors(i, cfg.search_exponent).anchors
    if W is None:
        return list(a)
    return [t for t in a if t < W.lo]


def candidate_spans(i: int, cfg: AttnConfig, exclude_window_anchors: bool = False) -> list[Span]:
    ts = candidate_anchors(i, cfg) if exclude_window_anchors else anchors(i, cfg.search_exponent).anchors
    return [build_span(i, t, cfg) for t in ts]


def audit_coverage(i: int, cfg: AttnConfig, exclude_window_anchors: bool = False) -> CoverageReport:
    """Mark every key ``0..i`` reachable through the window or some candidate span.

    By default all anchors contribute a candidate span. With
    ``exclude_window_anchors`` only the anchors the layer actually scores
    (those outside the window) do, which is the routable family.
    """
    mask = np.zeros(i + 1, dtype=bool)
    W = window_span(i, cfg.window)
    if W is not None:
        mask[W.lo : W.hi + 1] = True
    for sp in candidate_spans(i, cfg, exclude_window_anchors):
        mask[sp.lo : sp.hi + 1] = True
    missing = np.flatnonzero(~mask).tolist()
    return CoverageReport(i, not missing, missing)


def audit_coverage_range(L: int, cfg: AttnConfig, exclude_window_anchors: bool = False) -> Optional[int]:
    """Smallest ``i < L`` whose candidate family leaves a key uncovered, else ``None``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    off = stride_offsets(cfg.search_exponent, L - 1)
    back, fwd = extent_tables(L, cfg)
    first = kernels.audit_range(L, off, back, fwd, int(cfg.window), bool(exclude_window_anchors))
    return None if first < 0 else int(first)
