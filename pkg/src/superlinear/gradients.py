"""Hand-derived backward pass of the layer and a finite-difference oracle.

The top-k set is frozen from the forward pass: gradients reach ``Qs`` and
``Ka`` only through the softmax gate over *selected* anchors, so anchors
that were scored but not selected get exactly zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attention import RoutingDecision, softmax
from .config import AttnConfig, SequenceTensors, rng_stream
from .errors import DimensionMismatch
from .layer import LayerOutput, forward_prefill

FIELDS = ("Q", "K", "V", "Qs", "Ka")

# Small config for finite-difference checks: several candidates per query
# beyond k, so the unselected-anchor path is exercised.
GRADCHECK_CONFIG = AttnConfig(top_k=2, backward_factor=2.0, forward_factor=1.0, window=8, head_dim=8)


@dataclass
class GradientBundle:
    d_Q: np.ndarray
    d_K: np.ndarray
    d_V: np.ndarray
    d_Qs: np.ndarray
    d_Ka: np.ndarray

    def get(self, name: str) -> np.ndarray:
        return getattr(self, "d_" + name)

    @classmethod
    def zeros(cls, L: int, d: int) -> "GradientBundle":
        return cls(*(np.zeros((L, d)) for _ in FIELDS))


def backward_combine(decision: RoutingDecision, span_outputs: Sequence[np.ndarray], d_O) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian product of ``O = sum_t softmax(s)_t A_t``.

    Returns ``d_scores[t] = a_t (<dO, A_t> - <dO, O>)`` and
    ``d_span_outputs[t] = a_t dO``.
    """
    A = np.asarray(span_outputs, dtype=np.float64)
    d_O = np.asarray(d_O, dtype=np.float64)
    if A.shape[0] != decision.k:
        raise DimensionMismatch(f"{A.shape[0]} outputs for {decision.k} selected anchors")
    alpha = softmax(decision.scores)
    O = alpha @ A
    d_scores = alpha * (A @ d_O - O @ d_O)
    return d_scores, alpha[:, None] * d_O[None, :]


def span_attention_backward(Q_i, K, V, indices, d_A):
    """Gradients of one span attention output w.r.t. ``Q_i`` and the gathered ``K``, ``V`` rows."""
    Q_i = np.asarray(Q_i, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    Kj = K[idx].astype(np.float64, copy=False)
    Vj = V[idx].astype(np.float64, copy=False)
    scale = 1.0 / math.sqrt(Q_i.shape[0])
    p = softmax(Kj @ Q_i * scale)
    dV = np.outer(p, d_A)
    dp = Vj @ d_A
    dz = p * (dp - p @ dp)
    dQ = scale * (dz @ Kj)
    dK = scale * np.outer(dz, Q_i)
    return dQ, dK, dV


def backward_layer(seq: SequenceTensors, cfg: AttnConfig, d_O, forward: Optional[LayerOutput] = None) -> GradientBundle:
    """Gradients of the scalar ``<d_O, O>`` w.r.t. every input tensor.

    Selections come from ``forward`` (recomputed when not given). Rows are
    accumulated in ascending query order.
    """
    d_O = np.asarray(d_O, dtype=np.float64)
    L, d = seq.length, seq.dim
    if d_O.shape != (L, d):
        raise DimensionMismatch(f"d_O has shape {d_O.shape}, expected {(L, d)}")
    if forward is None or not forward.traces:
        forward = forward_prefill(seq, cfg, keep_trace=True)
    g = GradientBundle.zeros(L, d)
    for dec, tr in zip(forward.decisions, forward.traces):
        i = dec.query_pos
        if dec.k == 0:
            d_As = [d_O[i]]
        else:
            d_s, d_As = backward_combine(dec, tr.span_outputs, d_O[i])
            g.d_Qs[i] += d_s @ seq.Ka[dec.selected_anchors]
            np.add.at(g.d_Ka, dec.selected_anchors, np.outer(d_s, seq.Qs[i]))
        for J, d_A in zip(tr.index_sets, d_As):
            dQ, dK, dV = span_attention_backward(seq.Q[i], seq.K, seq.V, J, d_A)
            g.d_Q[i] += dQ
            g.d_K[J] += dK
            g.d_V[J] += dV
    return g


# ---------------------------------------------------------------------------
# finite-difference oracle


def dependents(forward: LayerOutput, L: int) -> dict[str, list[list[int]]]:
    """For each tensor and row ``j``, the queries whose output can depend on row ``j``."""
    att = [[] for _ in range(L)]
    cand = [[] for _ in range(L)]
    for tr in forward.traces:
        for j in tr.attended.tolist():
            att[j].append(tr.query_pos)
        for t in tr.candidates:
            cand[t].append(tr.query_pos)
    own = [[j] for j in range(L)]
    return {"Q": own, "Qs": own, "K": att, "V": att, "Ka": cand}


def _variant_rows(base_rows, rows_idx, j, deltas, hit):
    """Stack ``P`` copies of gathered rows with ``deltas`` added to row ``j`` when ``hit``."""
    out = np.broadcast_to(base_rows, (len(deltas),) + base_rows.shape).copy()
    if hit:
        pos = np.flatnonzero(rows_idx == j)
        out[:, pos, :] += deltas[:, None, :]
    return out


def _query_variants(seq: SequenceTensors, cfg: AttnConfig, tr, field: str, j: int, deltas: np.ndarray):
    """Outputs of query ``tr.query_pos`` under ``P`` perturbations of row ``j`` of ``field``.

    A batched, separately written replay of the forward arithmetic. Also
    returns, per variant, whether its top-k set differs from the traced one.
    """
    i = tr.query_pos
    P, d = deltas.shape
    scale = 1.0 / math.sqrt(d)
    q = np.broadcast_to(seq.Q[i], (P, d)).copy()
    if field == "Q" and j == i:
        q += deltas
    cand = np.asarray(tr.candidates, dtype=np.int64)
    changed = np.zeros(P, dtype=bool)
    if cand.size:
        qs = np.broadcast_to(seq.Qs[i], (P, d)).copy()
        if field == "Qs" and j == i:
            qs += deltas
        ka = _variant_rows(seq.Ka[cand], cand, j, deltas, field == "Ka")
        scores = np.einsum("pnd,pd->pn", ka, qs)
        # candidates are in descending position order: a stable sort breaks ties by recency
        order = np.argsort(-scores, axis=1, kind="stable")[:, : cfg.top_k]
        ref = np.asarray([np.flatnonzero(cand == sp.anchor)[0] for sp in tr.spans], dtype=np.int64)
        changed = np.any(order != ref[None, :], axis=1)
        gate = scores[:, ref]
        gate = np.exp(gate - gate.max(axis=1, keepdims=True))
        gate /= gate.sum(axis=1, keepdims=True)
    else:
        gate = np.ones((P, 1))
    out = np.zeros((P, d))
    for col, J in enumerate(tr.index_sets):
        k_rows = _variant_rows(seq.K[J], J, j, deltas, field == "K")
        v_rows = _variant_rows(seq.V[J], J, j, deltas, field == "V")
        z = np.einsum("pnd,pd->pn", k_rows, q) * scale
        w = np.exp(z - z.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        out += gate[:, col : col + 1] * np.einsum("pn,pnd->pd", w, v_rows)
    return out, changed


def numerical_gradients(seq: SequenceTensors, cfg: AttnConfig, d_O, eps: float = 1e-5, fields: Sequence[str] = FIELDS):
    """Central differences of ``<d_O, O>`` through a replay of the forward pass.

    Only queries whose output structurally depends on a perturbed row are
    re-evaluated. Returns ``(grads, excluded)`` where ``excluded`` marks the
    components whose perturbation changed some top-k set (non-differentiable
    points); callers leave those out of comparisons.
    """
    d_O = np.asarray(d_O, dtype=np.float64)
    base = forward_prefill(seq, cfg, keep_trace=True)
    deps = dependents(base, seq.length)
    L, d = seq.length, seq.dim
    deltas = np.concatenate([eps * np.eye(d), -eps * np.eye(d)])
    grads, excluded = {}, {}
    for name in fields:
        G = np.zeros((L, d))
        X = np.zeros((L, d), dtype=bool)
        for j in range(L):
            plus = np.zeros(d)
            minus = np.zeros(d)
            for qi in deps[name][j]:
                out, changed = _query_variants(seq, cfg, base.traces[qi], name, j, deltas)
                f = out @ d_O[qi]
                plus += f[:d]
                minus += f[d:]
                X[j] |= changed[:d] | changed[d:]
            G[j] = (plus - minus) / (2 * eps)
        grads[name] = G
        excluded[name] = X
    return grads, excluded


def relative_error(analytic, numeric, floor: float = 1e-4) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckResult:
    max_rel_error: dict[str, float]
    excluded: dict[str, int]
    components: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def random_instance(L: int, d: int, seed: int, instance: int = 0):
    """Gaussian tensors and upstream gradient for one gradient-check instance."""
    rng = rng_stream(seed, f"gradcheck/{L}/{d}/{instance}")
    seq = SequenceTensors.random(L, d, rng)
    return seq, rng.standard_normal((L, d))


def gradcheck(seq: SequenceTensors, cfg: AttnConfig, d_O, eps: float = 1e-5, floor: float = 1e-4) -> GradCheckResult:
    """Compare :func:`backward_layer` with :func:`numerical_gradients` component-wise."""
    fwd = forward_prefill(seq, cfg, keep_trace=True)
    g = backward_layer(seq, cfg, d_O, fwd)
    num, exc = numerical_gradients(seq, cfg, d_O, eps)
    errs, n_exc, n_comp = {}, {}, {}
    for name in FIELDS:
        keep = ~exc[name]
        r = relative_error(g.get(name), num[name], floor)[keep]
        errs[name] = float(r.max()) if r.size else 0.0
        n_exc[name] = int(exc[name].sum())
        n_comp[name] = int(keep.sum())
    return GradCheckResult(errs, n_exc, n_comp)
