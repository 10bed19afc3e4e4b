"""Synthetic needle retrieval: does gradient descent on the router find the needle span?

Token channels: 0 marks the needle, 1 flags the final (query) token, the
rest carry content. The needle's content is the payload. Attention
projections are fixed so that, inside any span containing the needle, the
query attends almost entirely to it. The routing queries ``Qs = X @ Ws.T``
(and optionally the representative key projection) are the only trained
parameters, so the router must learn to score anchors whose accumulated
state carries the decaying needle marker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accumulation import RecurrenceParams, hidden_states
from .config import AttnConfig, OpCounters, SequenceTensors, rng_stream
from .gradients import backward_layer
from .layer import LayerOutput, _route_and_attend
from .spans import candidate_spans, window_span

MARKER, FLAG = 0, 1

# Extended-style spans with a window much shorter than the sequence, so
# that most needles can only be reached through routing.
TOY_CONFIG = AttnConfig(top_k=2, backward_factor=4.0, forward_factor=2.0, window=64, head_dim=16)


@dataclass(frozen=True)
class ToyTask:
    length: int = 1024
    dim: int = 16
    batch: int = 16
    lr: float = 0.5
    marker_decay: float = 0.99
    content_scale: float = 0.3
    # softmax logit of the needle inside a span
    needle_logit: float = 12.0
    init_scale: float = 0.1
    # "all", "outside_window" or "inside_window"
    region: str = "all"
    eval_episodes: int = 256
    eval_every: int = 100
    fixed_batch: bool = False
    train_key_proj: bool = False
    # also train the attention projections Wq, Wk, Wv
    train_attention: bool = False


@dataclass
class LearningCurve:
    step: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    routing_accuracy: list[float] = field(default_factory=list)
    eval_step: list[int] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)

    @property
    def initial_accuracy(self) -> float:
        return self.eval_accuracy[0]

    @property
    def final_accuracy(self) -> float:
        return self.eval_accuracy[-1]


def _payload_range(task: ToyTask, cfg: AttnConfig) -> tuple[int, int]:
    L = task.length
    W = window_span(L - 1, cfg.window)
    wlo = W.lo if W is not None else L - 1
    if task.region == "outside_window":
        return 0, wlo
    if task.region == "inside_window":
        return wlo, L - 1
    return 0, L - 1


def _episodes(task: ToyTask, cfg: AttnConfig, rng: np.random.Generator, n: int):
    """Token matrices (n, L, d), needle positions and targets."""
    L, d = task.length, task.dim
    X = np.zeros((n, L, d))
    X[:, :, 2:] = task.content_scale * rng.standard_normal((n, L, d - 2))
    lo, hi = _payload_range(task, cfg)
    pos = rng.integers(lo, hi, size=n)
    payload = rng.standard_normal((n, d - 2))
    payload /= np.linalg.norm(payload, axis=1, keepdims=True)
    targets = np.zeros((n, d))
    targets[:, 2:] = payload
    rows = np.arange(n)
    X[rows, pos, MARKER] = 1.0
    X[rows, pos, 2:] = payload
    X[:, L - 1, :] = 0.0
    X[:, L - 1, FLAG] = 1.0
    return X, pos, targets


class ToyModel:
    def __init__(self, task: ToyTask, cfg: AttnConfig, seed: int):
        d = task.dim
        rng = rng_stream(seed, "toy/init")
        self.task, self.cfg = task, cfg
        base = RecurrenceParams.init(d, rng)
        decay = base.decay.copy()
        decay[MARKER] = task.marker_decay
        self.params = RecurrenceParams(decay, np.eye(d), np.eye(d))
        self.Ws = task.init_scale * rng.standard_normal((d, d)) / math.sqrt(d)
        beta = math.sqrt(task.needle_logit * math.sqrt(d))
        self.Wq = np.zeros((d, d))
        self.Wq[MARKER, FLAG] = beta
        self.Wk = np.zeros((d, d))
        self.Wk[MARKER, MARKER] = beta
        self.Wv = np.diag([0.0, 0.0] + [1.0] * (d - 2))

    def tensors(self, X: np.ndarray, H: np.ndarray) -> SequenceTensors:
        return SequenceTensors(X @ self.Wq.T, X @ self.Wk.T, X @ self.Wv.T, X @ self.Ws.T, H @ self.params.key_proj.T)

    def step(self, X, pos, targets, train: bool = True):
        """Loss, routing hits and (optionally) parameter gradients for a batch.

        Gradients come back as a dict keyed by parameter name; only the
        parameters enabled by the task flags are present.
        """
        L, d = self.task.length, self.task.dim
        H = hidden_states(X, self.params)
        names = ["Ws"] + (["key_proj"] if self.task.train_key_proj else [])
        names += ["Wq", "Wk", "Wv"] if self.task.train_attention else []
        grads = {name: np.zeros((d, d)) for name in names}
        losses, hits = [], []
        for b in range(X.shape[0]):
            seq = self.tensors(X[b], H[b])
            out, dec, tr = _route_and_attend(seq, self.cfg, L - 1, OpCounters())
            err = out - targets[b]
            losses.append(float(err @ err))
            hits.append(any(bool(np.any(J == pos[b])) for J in tr.index_sets))
            if not train:
                continue
            d_O = np.zeros((L, d))
            d_O[L - 1] = 2.0 * err
            g = backward_layer(seq, self.cfg, d_O, LayerOutput(out[None], [dec], OpCounters(), [tr]))
            grads["Ws"] += np.outer(g.d_Qs[L - 1], X[b, L - 1])
            if "key_proj" in grads:
                grads["key_proj"] += g.d_Ka.T @ H[b]
            if "Wq" in grads:
                grads["Wq"] += g.d_Q.T @ X[b]
                grads["Wk"] += g.d_K.T @ X[b]
                grads["Wv"] += g.d_V.T @ X[b]
        n = X.shape[0]
        return float(np.mean(losses)), float(np.mean(hits)), {k: v / n for k, v in grads.items()}

    def apply(self, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            if name == "key_proj":
                p = self.params
                self.params = RecurrenceParams(p.decay, p.input_proj, p.key_proj - lr * g)
            else:
                setattr(self, name, getattr(self, name) - lr * g)

    def accuracy(self, X, pos, targets) -> float:
        return self.step(X, pos, targets, train=False)[1]


def random_routing_accuracy(task: ToyTask, cfg: AttnConfig) -> float:
    """Expected hit rate when the query picks ``k`` candidates uniformly at random.

    Exact: averages ``1 - C(n - c_j, k) / C(n, k)`` over payload positions
    ``j``, where ``c_j`` counts candidate spans containing ``j`` (window
    positions always hit).
    """
    i = task.length - 1
    W = window_span(i, cfg.window)
    spans = candidate_spans(i, cfg, exclude_window_anchors=True)
    n = len(spans)
    k = min(cfg.top_k, n)
    lo, hi = _payload_range(task, cfg)
    total = 0.0
    for j in range(lo, hi):
        if (W is not None and j in W) or n == 0:
            total += 1.0
            continue
        c = sum(j in sp for sp in spans)
        total += 1.0 - math.comb(n - c, k) / math.comb(n, k)
    return total / (hi - lo)


def toy_learnability(task: ToyTask, cfg: AttnConfig, steps: int, seed: int = 0) -> LearningCurve:
    """Plain gradient descent on the router (and flagged extras); returns the learning curve.

    Training batches are fresh each step unless ``task.fixed_batch``. A
    held-out evaluation set measures routing accuracy at step 0, every
    ``task.eval_every`` steps and after the last step.
    """
    model = ToyModel(task, cfg, seed)
    train_rng = rng_stream(seed, "toy/train")
    eval_set = _episodes(task, cfg, rng_stream(seed, "toy/eval"), task.eval_episodes)
    curve = LearningCurve()
    batch = _episodes(task, cfg, train_rng, task.batch) if task.fixed_batch else None

    def evaluate(step):
        curve.eval_step.append(step)
        curve.eval_accuracy.append(model.accuracy(*eval_set))

    evaluate(0)
    for step in range(steps):
        X, pos, tgt = batch if task.fixed_batch else _episodes(task, cfg, train_rng, task.batch)
        loss, acc, grads = model.step(X, pos, tgt)
        curve.step.append(step)
        curve.loss.append(loss)
        curve.routing_accuracy.append(acc)
        model.apply(grads, task.lr)
        if task.eval_every and (step + 1) % task.eval_every == 0 and step + 1 < steps:
            evaluate(step + 1)
    evaluate(steps)
    return curve
