import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superlinear.accumulation import (
    RecurrenceParams,
    accumulate,
    hidden_states,
    load_params,
    load_tensor,
    passthrough_ka,
    save_params,
    save_tensor,
)
from superlinear.config import rng_stream
from superlinear.errors import DimensionMismatch, TensorFormatError


def naive_recurrence(X, p):
    H = np.zeros(p.dim)
    out = []
    for x in X:
        H = p.decay * H + p.input_proj @ x
        out.append(p.key_proj @ H)
    return np.array(out)


def test_memoryless_when_decay_zero():
    rng = rng_stream(0, "acc")
    p = RecurrenceParams.init(6, rng)
    p = RecurrenceParams(np.zeros(6), p.input_proj, p.key_proj)
    X = rng.standard_normal((10, 6))
    assert np.allclose(accumulate(X, p), X @ (p.key_proj @ p.input_proj).T, atol=1e-14)


def test_prefix_sum_with_unit_decay():
    X = rng_stream(1, "acc").standard_normal((50, 4))
    assert np.allclose(accumulate(X, RecurrenceParams.identity(4)), np.cumsum(X, axis=0), atol=1e-12)


def test_matches_naive_loop():
    rng = rng_stream(2, "acc")
    p = RecurrenceParams.init(5, rng)
    X = rng.standard_normal((40, 5))
    assert np.allclose(accumulate(X, p), naive_recurrence(X, p), rtol=1e-12, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(L=st.integers(2, 60), t=st.data(), seed=st.integers(0, 1000))
def test_causality_bit_identical(L, t, seed):
    rng = rng_stream(seed, "causal")
    p = RecurrenceParams.init(4, rng)
    p = RecurrenceParams(np.full(4, 0.9), p.input_proj, p.key_proj)
    X = rng.standard_normal((L, 4))
    cut = t.draw(st.integers(0, L - 2))
    Y = X.copy()
    Y[cut + 1 :] += rng.standard_normal((L - cut - 1, 4))
    assert np.array_equal(accumulate(X, p)[: cut + 1], accumulate(Y, p)[: cut + 1])


def test_linearity():
    rng = rng_stream(3, "lin")
    p = RecurrenceParams.init(8, rng)
    X, Y = rng.standard_normal((2, 100, 8))
    a, b = 1.7, -0.3
    lhs = accumulate(a * X + b * Y, p)
    rhs = a * accumulate(X, p) + b * accumulate(Y, p)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_batched_matches_unbatched():
    rng = rng_stream(4, "batch")
    p = RecurrenceParams.init(3, rng)
    X = rng.standard_normal((5, 20, 3))
    H = hidden_states(X, p)
    for b in range(5):
        assert np.array_equal(H[b], hidden_states(X[b], p))


def test_init_ranges():
    p = RecurrenceParams.init(16, rng_stream(0, "init"))
    assert np.all((p.decay >= 0.8) & (p.decay <= 0.999))
    assert np.allclose(p.input_proj @ p.input_proj.T, np.eye(16) / 16)


def test_invalid_params():
    with pytest.raises(ValueError):
        RecurrenceParams(np.array([1.2]), np.eye(1), np.eye(1))
    with pytest.raises(DimensionMismatch):
        RecurrenceParams(np.ones(2), np.eye(3), np.eye(2))
    with pytest.raises(DimensionMismatch):
        accumulate(np.zeros((4, 3)), RecurrenceParams.identity(2))


def test_passthrough():
    K = np.arange(6.0).reshape(3, 2)
    assert passthrough_ka(K) is K
    assert passthrough_ka(np.zeros((0, 2))).shape == (0, 2)
    assert np.array_equal(passthrough_ka(K[:1]), K[:1])


def test_params_round_trip(tmp_path):
    p = RecurrenceParams.init(7, rng_stream(5, "io"))
    path = tmp_path / "p.bin"
    save_params(p, path)
    raw = path.read_bytes()
    assert raw[:8] == b"SLRECUR1" and int.from_bytes(raw[8:16], "little") == 7
    assert len(raw) == 16 + 8 * (7 + 2 * 49)
    q = load_params(path)
    for a, b in ((p.decay, q.decay), (p.input_proj, q.input_proj), (p.key_proj, q.key_proj)):
        assert np.array_equal(a, b)


def test_tensor_round_trip_and_errors(tmp_path):
    M = rng_stream(6, "io").standard_normal((9, 4))
    path = tmp_path / "m.bin"
    save_tensor(M, path)
    assert np.array_equal(load_tensor(path), M)
    path.write_bytes(b"XXXXXXXX" + path.read_bytes()[8:])
    with pytest.raises(TensorFormatError):
        load_tensor(path)
    path.write_bytes(b"short")
    with pytest.raises(TensorFormatError):
        load_tensor(path)
