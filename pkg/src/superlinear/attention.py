"""Numerical kernels: routing scores, top-k, span attention, combination, dense oracle.

Search scores are raw dot products ``Qs(i) . Ka(t)``; the ``1/sqrt(d)``
temperature applies only inside span and dense attention. Everything is
accumulated in float64 regardless of the input width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import OpCounters
from .errors import DimensionMismatch, EmptyIndexSet


@dataclass
class RoutingDecision:
    query_pos: int
    selected_anchors: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.selected_anchors)


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    e = np.exp(x - x.max())
    return e / e.sum()


def search_scores(Qs_i, Ka, anchor_positions: Sequence[int], counters: Optional[OpCounters] = None) -> np.ndarray:
    """``s_t = Qs_i . Ka[t]`` for each anchor, in the given order."""
    Qs_i = np.asarray(Qs_i, dtype=np.float64)
    Ka = np.asarray(Ka)
    if Qs_i.ndim != 1 or Ka.ndim != 2 or Ka.shape[1] != Qs_i.shape[0]:
        raise DimensionMismatch(f"Qs_i {Qs_i.shape} vs Ka {Ka.shape}")
    idx = np.asarray(anchor_positions, dtype=np.int64)
    if counters is not None:
        counters.add(anchors_scored=len(idx))
    if idx.size == 0:
        return np.zeros(0)
    return Ka[idx].astype(np.float64, copy=False) @ Qs_i


def top_k_select(anchor_positions: Sequence[int], scores: Sequence[float], k: int, query_pos: int = -1) -> RoutingDecision:
    """Keep the ``min(k, n)`` highest-scoring anchors, ordered by descending score.

    Ties go to the larger (more recent) anchor position. Anchor positions of
    one query are distinct so no further tie-break is needed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    anchor_positions = [int(a) for a in anchor_positions]
    scores = [float(s) for s in scores]
    if len(anchor_positions) != len(scores):
        raise DimensionMismatch("anchors and scores must be aligned")
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], -anchor_positions[j]))[:k]
    sel = [anchor_positions[j] for j in order]
    sc = [scores[j] for j in order]
    return RoutingDecision(query_pos, sel, sc, softmax(sc).tolist())


def _span_probs(Q_i, K, indices) -> tuple[np.ndarray, np.ndarray]:
    Q_i = np.asarray(Q_i, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise EmptyIndexSet("span attention needs at least one key")
    if K.ndim != 2 or K.shape[1] != Q_i.shape[0]:
        raise DimensionMismatch(f"Q_i {Q_i.shape} vs K {K.shape}")
    logits = K[idx].astype(np.float64, copy=False) @ Q_i / math.sqrt(Q_i.shape[0])
    return idx, softmax(logits)


def span_attention(Q_i, K, V, indices, counters: Optional[OpCounters] = None) -> np.ndarray:
    """Scaled dot-product attention of one query over the given key indices."""
    idx, p = _span_probs(Q_i, K, indices)
    if counters is not None:
        counters.add(keys_attended=len(idx))
    return p @ V[idx].astype(np.float64, copy=False)


def combine(decision: RoutingDecision, span_outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Softmax-over-scores mixture of the span outputs; records the weights on ``decision``."""
    if len(span_outputs) != decision.k or decision.k == 0:
        raise DimensionMismatch(f"{len(span_outputs)} outputs for {decision.k} selected anchors")
    alpha = softmax(decision.scores)
    decision.weights = alpha.tolist()
    return alpha @ np.asarray(span_outputs, dtype=np.float64)


def dense_attention(Q, K, V) -> np.ndarray:
    """Exact causal softmax attention; row ``i`` attends to keys ``0..i``."""
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.ndim != 2 or Q.shape != K.shape or K.shape[0] != V.shape[0]:
        raise DimensionMismatch(f"Q {Q.shape}, K {K.shape}, V {V.shape}")
    L, d = Q.shape
    S = Q @ K.T / math.sqrt(d)
    S[np.triu_indices(L, 1)] = -np.inf
    S -= S.max(axis=1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(axis=1, keepdims=True)
    return P @ V
