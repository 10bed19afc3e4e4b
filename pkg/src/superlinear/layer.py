"""Two-step span attention layer: prefill, incremental decode and scaling sweeps.

Per query ``i``: window ``W = [max(0, i-w+1), i]``; candidates are the
anchors outside ``W``; score, keep the top ``k``; attend over each selected
span merged with ``W``; mix the span outputs with softmax weights of their
scores. With no candidate left the query attends over ``W`` alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .anchors import stride_offsets
from .attention import RoutingDecision, combine, dense_attention, search_scores, span_attention, top_k_select
from .config import AttnConfig, OpCounters, SequenceTensors, rng_stream
from .errors import DegenerateFit, DimensionMismatch, EmptySequence
from .fitting import fit_exponent
from .spans import Span, base_span_length, build_span, candidate_anchors, dedup_concat, extent_tables, union_size, window_span


@dataclass
class QueryTrace:
    """Everything the backward pass needs to replay one query."""

    query_pos: int
    window: Optional[Span]
    candidates: list[int]
    spans: list[Span]
    index_sets: list[np.ndarray]
    span_outputs: list[np.ndarray]
    output: np.ndarray

    @property
    def attended(self) -> np.ndarray:
        if not self.index_sets:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.index_sets))


@dataclass
class LayerOutput:
    O: np.ndarray
    decisions: list[RoutingDecision]
    counters: OpCounters
    traces: list[QueryTrace] = field(default_factory=list)


def _route_and_attend(seq: SequenceTensors, cfg: AttnConfig, i: int, counters: OpCounters):
    W = window_span(i, cfg.window)
    cand = candidate_anchors(i, cfg)
    scores = search_scores(seq.Qs[i], seq.Ka, cand, counters)
    decision = top_k_select(cand, scores, cfg.top_k, query_pos=i)
    if decision.k == 0:
        idx = W.indices()
        out = span_attention(seq.Q[i], seq.K, seq.V, idx)
        counters.add(keys_attended=len(idx), queries_processed=1)
        return out, decision, QueryTrace(i, W, cand, [], [idx], [out], out)

    spans, index_sets, outs = [], [], []
    for t in decision.selected_anchors:
        sp = build_span(i, t, cfg)
        J = dedup_concat(sp, W)
        spans.append(sp)
        index_sets.append(J)
        outs.append(span_attention(seq.Q[i], seq.K, seq.V, J))
    out = combine(decision, outs)
    ranges = [(s.lo, s.hi) for s in spans] + ([(W.lo, W.hi)] if W is not None else [])
    counters.add(keys_attended=union_size(ranges), queries_processed=1)
    return out, decision, QueryTrace(i, W, cand, spans, index_sets, outs, out)


def forward_decode_step(seq_prefix: SequenceTensors, cfg: AttnConfig, i: Optional[int] = None):
    """One generated token: route and attend for query ``i`` (default: last position).

    Returns ``(output, decision, counter_delta)``; the arithmetic is exactly
    that of iteration ``i`` of :func:`forward_prefill`.
    """
    if seq_prefix.length == 0:
        raise EmptySequence("decode needs at least one position")
    if i is None:
        i = seq_prefix.length - 1
    if not 0 <= i < seq_prefix.length:
        raise DimensionMismatch(f"position {i} outside prefix of length {seq_prefix.length}")
    delta = OpCounters()
    out, decision, _ = _route_and_attend(seq_prefix, cfg, i, delta)
    return out, decision, delta


def forward_prefill(seq: SequenceTensors, cfg: AttnConfig, workers: int = 1, keep_trace: bool = False) -> LayerOutput:
    """Process every query of the sequence.

    ``workers > 1`` shards query positions over threads; each shard keeps its
    own counters and shards are merged in position order, so results do not
    depend on the worker count.
    """
    L = seq.length
    if L == 0:
        raise EmptySequence("prefill needs at least one position")

    def run(chunk):
        c = OpCounters()
        res = [_route_and_attend(seq, cfg, i, c) for i in chunk]
        return res, c

    size = -(-L // max(1, workers))
    chunks = [range(a, min(L, a + size)) for a in range(0, L, size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(ch) for ch in chunks]

    O = np.empty((L, seq.dim), dtype=np.float64)
    decisions, traces, counters = [], [], OpCounters()
    for res, c in parts:
        counters.merge(c)
        for out, dec, tr in res:
            O[dec.query_pos] = out
            decisions.append(dec)
            if keep_trace:
                traces.append(tr)
    return LayerOutput(O, decisions, counters, traces)


def forward_prefill_heads(heads: Sequence[SequenceTensors], cfg: AttnConfig, workers: int = 1) -> list[LayerOutput]:
    """Independent route-and-attend per head, each with its own routing queries."""
    if len(heads) != cfg.num_heads:
        raise DimensionMismatch(f"{len(heads)} heads given, config says {cfg.num_heads}")
    return [forward_prefill(h, cfg, workers=workers) for h in heads]


# ---------------------------------------------------------------------------
# geometry-only mode

_GEOM_CHUNK = 1 << 20


@dataclass
class GeometryCounts:
    positions: np.ndarray
    anchors_scored: np.ndarray
    keys_attended: np.ndarray
    # selected anchors per query, -1 padded; empty when not kept
    selected: np.ndarray

    def spans(self, cfg: AttnConfig) -> list[tuple[int, Span]]:
        """``(query, span)`` work items of the selected anchors, in query order."""
        items = []
        L = int(self.positions.max()) + 1 if len(self.positions) else 0
        back, fwd = extent_tables(L, cfg)
        for q, i in enumerate(self.positions.tolist()):
            for t in self.selected[q].tolist():
                if t < 0:
                    break
                items.append((i, Span(max(0, t - int(back[i])), min(i, t + int(fwd[i])), t)))
        return items

    def totals(self) -> OpCounters:
        return OpCounters(int(self.anchors_scored.sum()), int(self.keys_attended.sum()), len(self.positions))


def geometry_counts(L: int, cfg: AttnConfig, positions=None, trial: int = 0, keep_selection: bool = True) -> GeometryCounts:
    """Counters of a content-free routing pass: no tensors are materialised.

    Each query selects ``min(k, n)`` of its ``n`` candidates uniformly at
    random from a seeded stream, which stands in for arbitrary content.
    """
    if L < 1:
        raise EmptySequence("L must be >= 1")
    positions = np.arange(L, dtype=np.int64) if positions is None else np.asarray(positions, dtype=np.int64)
    off = stride_offsets(cfg.search_exponent, L - 1)
    back, fwd = extent_tables(L, cfg)
    rng = rng_stream(cfg.seed, f"geometry/{L}/{trial}")
    k = cfg.top_k
    parts = []
    for a in range(0, len(positions), _GEOM_CHUNK):
        pos = positions[a : a + _GEOM_CHUNK]
        u = rng.random((len(pos), k))
        n, keys, sel = kernels.route_geometry(pos, off, back, fwd, int(cfg.window), k, u)
        if not keep_selection:
            sel = np.zeros((0, k), dtype=np.int64)
        parts.append((n, keys, sel))
    cat = [np.concatenate([p[j] for p in parts]) for j in range(3)]
    return GeometryCounts(positions, *cat)


def dense_counters(L: int) -> OpCounters:
    """Work of exact causal attention: every query attends its full prefix."""
    return OpCounters(0, L * (L + 1) // 2, L)


@dataclass
class ScalingRow:
    L: int
    anchors_scored: int
    keys_attended: int


@dataclass
class ScalingResult:
    rows: list[ScalingRow]
    slope_search: float
    slope_attend: float
    r2_search: float
    r2_attend: float


def measure_scaling(lengths, cfg: AttnConfig, trials: int = 1, geometry_only: bool = True, dense: bool = False) -> ScalingResult:
    """Counter totals per length and their log-log slopes against ``L``.

    ``dense=True`` measures the exact causal oracle instead of the routed
    layer. Tensor mode runs :func:`forward_prefill` on random inputs.
    """
    lengths = [int(L) for L in lengths]
    if len(set(lengths)) < 2:
        raise DegenerateFit("need at least two distinct lengths")
    rows = []
    for L in lengths:
        a_tot = k_tot = 0
        for trial in range(trials):
            if dense:
                c = dense_counters(L)
            elif geometry_only:
                c = geometry_counts(L, cfg, trial=trial, keep_selection=False).totals()
            else:
                rng = rng_stream(cfg.seed, f"scaling/{L}/{trial}")
                c = forward_prefill(SequenceTensors.random(L, cfg.head_dim, rng), cfg).counters
            a_tot += c.anchors_scored
            k_tot += c.keys_attended
        rows.append(ScalingRow(L, a_tot // trials, k_tot // trials))
    Ls = [r.L for r in rows]
    ks, kr2 = fit_exponent(Ls, [r.keys_attended for r in rows], min_points=2)
    if dense:
        ss, sr2 = float("nan"), float("nan")
    else:
        ss, sr2 = fit_exponent(Ls, [r.anchors_scored for r in rows], min_points=2)
    return ScalingResult(rows, ss, ks, sr2, kr2)


def decode_step_keys(positions, cfg: AttnConfig, trials: int = 16) -> np.ndarray:
    """Mean per-step ``keys_attended`` at each decode position, averaged over random routings."""
    positions = np.asarray(positions, dtype=np.int64)
    L = int(positions.max()) + 1
    acc = np.zeros(len(positions), dtype=np.float64)
    for trial in range(trials):
        acc += geometry_counts(L, cfg, positions=positions, trial=trial, keep_selection=False).keys_attended
    return acc / trials


def attended_bound(i: int, cfg: AttnConfig) -> int:
    """Upper bound ``k*((b+f)*l(i) + 1) + w`` on distinct keys attended by query ``i``."""
    ell = base_span_length(i, cfg.span_exponent)
    return int(cfg.top_k * ((cfg.backward_factor + cfg.forward_factor) * ell + 1) + cfg.window)


def dense_reference(seq: SequenceTensors) -> np.ndarray:
    return dense_attention(seq.Q, seq.K, seq.V)
