import numpy as np
import pytest

from superlinear.config import rng_stream
from superlinear.spans import candidate_spans, window_span
from superlinear.toy import TOY_CONFIG, ToyModel, ToyTask, random_routing_accuracy, toy_learnability

CFG = TOY_CONFIG


def test_needle_inside_window_always_found():
    curve = toy_learnability(ToyTask(region="inside_window", eval_episodes=64), CFG, 0)
    assert curve.initial_accuracy == 1.0


def test_random_baseline_formula_against_sampling():
    task = ToyTask(length=512, region="outside_window")
    i = task.length - 1
    spans = candidate_spans(i, CFG, exclude_window_anchors=True)
    W = window_span(i, CFG.window)
    rng = rng_stream(0, "mc")
    hits, n = 0, 20000
    for _ in range(n):
        j = int(rng.integers(0, W.lo))
        pick = rng.choice(len(spans), size=CFG.top_k, replace=False)
        hits += any(j in spans[s] for s in pick)
    assert abs(hits / n - random_routing_accuracy(task, CFG)) < 0.01


def test_untrained_router_near_random_baseline():
    task = ToyTask(region="outside_window", eval_episodes=2048)
    curve = toy_learnability(task, CFG, 0)
    # an untrained router is not exactly uniform; 0.05 absolute is about 4-5 sigma of eval noise
    assert abs(curve.initial_accuracy - random_routing_accuracy(task, CFG)) < 0.05


def test_loss_decreases_over_first_steps_with_small_lr():
    task = ToyTask(fixed_batch=True, lr=1e-4, eval_episodes=8)
    curve = toy_learnability(task, CFG, 10)
    assert np.all(np.diff(curve.loss) < 0)


def test_short_run_learns_and_is_deterministic():
    task = ToyTask(eval_every=50, eval_episodes=128)
    a = toy_learnability(task, CFG, 100)
    b = toy_learnability(task, CFG, 100)
    assert a.loss == b.loss and a.eval_accuracy == b.eval_accuracy
    assert a.final_accuracy > a.initial_accuracy + 0.3


def test_end_to_end_flags_produce_gradients():
    task = ToyTask(length=256, batch=4, train_attention=True, train_key_proj=True)
    model = ToyModel(task, CFG, 0)
    from superlinear.toy import _episodes

    X, pos, tgt = _episodes(task, CFG, rng_stream(0, "e2e"), task.batch)
    loss, acc, grads = model.step(X, pos, tgt)
    assert set(grads) == {"Ws", "key_proj", "Wq", "Wk", "Wv"}
    assert all(np.all(np.isfinite(g)) for g in grads.values())
    before = model.Wv.copy()
    model.apply(grads, 0.1)
    assert not np.array_equal(model.Wv, before)
