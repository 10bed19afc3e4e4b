import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superlinear.config import BASELINE, EXTENDED, TIGHT, AttnConfig, OpCounters, SequenceTensors, rng_stream, validate_config
from superlinear.errors import (
    BackwardFactorTooSmall,
    DimensionMismatch,
    ExponentSumTooSmall,
    FieldOutOfRange,
    NonPositiveField,
    UnknownConfigKey,
)


def test_balanced_tight_config_valid_with_coverage():
    cfg = AttnConfig(search_exponent=0.5, span_exponent=0.5, backward_factor=2.0)
    assert validate_config(cfg, coverage_required=True) is cfg


def test_backward_factor_below_inverse_exponent_rejected():
    with pytest.raises(BackwardFactorTooSmall) as e:
        validate_config(AttnConfig(backward_factor=1.5), coverage_required=True)
    assert e.value.field == "backward_factor"


def test_small_exponents_ok_without_coverage():
    cfg = AttnConfig(search_exponent=0.3, span_exponent=0.3)
    assert validate_config(cfg) is cfg


def test_small_exponents_rejected_with_coverage():
    cfg = AttnConfig(search_exponent=0.3, span_exponent=0.3, backward_factor=4.0)
    with pytest.raises(ExponentSumTooSmall):
        validate_config(cfg, coverage_required=True)


def test_extended_preset_values():
    assert (EXTENDED.search_exponent, EXTENDED.span_exponent) == (0.5, 0.5)
    assert EXTENDED.top_k == 2 and EXTENDED.block_size == 64
    assert (EXTENDED.backward_factor, EXTENDED.forward_factor, EXTENDED.window) == (4.0, 2.0, 1088)
    validate_config(EXTENDED, coverage_required=True)
    validate_config(TIGHT, coverage_required=True)
    validate_config(BASELINE, coverage_required=True)


@pytest.mark.parametrize(
    "changes, err",
    [
        ({"top_k": 0}, NonPositiveField),
        ({"block_size": 0}, NonPositiveField),
        ({"head_dim": 0}, NonPositiveField),
        ({"window": -1}, NonPositiveField),
        ({"forward_factor": -0.5}, NonPositiveField),
        ({"search_exponent": 0.0}, NonPositiveField),
        ({"span_exponent": 1.0}, FieldOutOfRange),
    ],
)
def test_invalid_fields_named(changes, err):
    with pytest.raises(err) as e:
        validate_config(EXTENDED.replace(**changes))
    assert e.value.field == next(iter(changes))


@given(
    p=st.floats(0.05, 0.95),
    q=st.floats(0.05, 0.95),
    b=st.floats(0, 10),
    k=st.integers(1, 8),
)
def test_validate_idempotent(p, q, b, k):
    cfg = AttnConfig(search_exponent=p, span_exponent=q, backward_factor=b, top_k=k)
    assert validate_config(validate_config(cfg)) == cfg


def test_json_round_trip(tmp_path):
    cfg = EXTENDED.replace(top_k=3, seed=7)
    path = tmp_path / "cfg.json"
    cfg.to_json(path)
    assert AttnConfig.from_json(path) == cfg


def test_unknown_key_is_hard_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"top_k": 2, "topk": 3}))
    with pytest.raises(UnknownConfigKey):
        AttnConfig.from_json(path)


def test_non_integer_for_int_field_rejected():
    with pytest.raises(FieldOutOfRange):
        AttnConfig.from_dict({"window": 3.5})
    assert AttnConfig.from_dict({"window": 64.0}).window == 64


def test_counters_merge_and_monotone():
    a = OpCounters()
    a.add(anchors_scored=3, keys_attended=10, queries_processed=1)
    b = OpCounters(1, 2, 1)
    a.merge(b)
    assert (a.anchors_scored, a.keys_attended, a.queries_processed) == (4, 12, 2)
    with pytest.raises(ValueError):
        a.add(keys_attended=-1)


def test_sequence_tensors_shape_check():
    rng = rng_stream(0, "x")
    seq = SequenceTensors.random(5, 3, rng)
    assert seq.length == 5 and seq.dim == 3
    with pytest.raises(DimensionMismatch):
        SequenceTensors(seq.Q, seq.K, seq.V, seq.Qs, np.zeros((4, 3)))


def test_rng_streams_reproducible_and_independent():
    a = rng_stream(3, "alpha").random(4)
    assert np.array_equal(a, rng_stream(3, "alpha").random(4))
    assert not np.array_equal(a, rng_stream(3, "beta").random(4))
    assert not np.array_equal(a, rng_stream(4, "alpha").random(4))
