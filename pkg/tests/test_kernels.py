import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superlinear import kernels
from superlinear.anchors import stride_offsets
from superlinear.config import EXTENDED, TIGHT, AttnConfig, rng_stream
from superlinear.spans import audit_coverage, extent_tables

BACKENDS = kernels.backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")


def test_selected_backend_is_known():
    assert kernels.BACKEND in BACKENDS


def _tables(L, cfg):
    off = stride_offsets(cfg.search_exponent, L - 1)
    back, fwd = extent_tables(L, cfg)
    return off, back, fwd


def _audit_first(L, cfg, excl):
    for i in range(L):
        rep = audit_coverage(i, cfg, exclude_window_anchors=excl)
        if not rep.covered:
            return i
    return -1


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize(
    "cfg",
    [TIGHT, EXTENDED.replace(window=40), TIGHT.replace(backward_factor=1.0), AttnConfig(search_exponent=0.6, span_exponent=0.3, backward_factor=2, forward_factor=0, window=0)],
)
@pytest.mark.parametrize("excl", [False, True])
def test_audit_range_matches_pointwise_audit(name, cfg, excl):
    L = 400
    off, back, fwd = _tables(L, cfg)
    got = BACKENDS[name].audit_range(L, off, back, fwd, cfg.window, excl)
    assert got == _audit_first(L, cfg, excl)


@needs_both
@settings(max_examples=30, deadline=None)
@given(
    L=st.integers(1, 3000),
    k=st.integers(1, 6),
    w=st.sampled_from([0, 1, 17, 1088]),
    b=st.sampled_from([1.0, 2.0, 4.0]),
    f=st.sampled_from([0.0, 0.2, 2.0]),
    seed=st.integers(0, 100),
)
def test_route_geometry_backends_agree(L, k, w, b, f, seed):
    cfg = AttnConfig(top_k=k, window=w, backward_factor=b, forward_factor=f)
    off, back, fwd = _tables(L, cfg)
    pos = np.arange(L)
    u = rng_stream(seed, "u").random((L, k))
    a = BACKENDS["cython"].route_geometry(pos, off, back, fwd, w, k, u)
    p = BACKENDS["python"].route_geometry(pos, off, back, fwd, w, k, u)
    for x, y in zip(a, p):
        assert np.array_equal(x, y)


@needs_both
@pytest.mark.parametrize("k", [1, 2, 5])
def test_route_geometry_selects_distinct_candidates(k):
    cfg = EXTENDED.replace(window=30, top_k=k)
    L = 500
    off, back, fwd = _tables(L, cfg)
    u = rng_stream(0, "u").random((L, k))
    n, keys, sel = BACKENDS["cython"].route_geometry(np.arange(L), off, back, fwd, cfg.window, k, u)
    for i in range(L):
        row = [t for t in sel[i] if t >= 0]
        assert len(row) == min(k, n[i]) == len(set(row))
        assert all(t < max(0, i - 29) for t in row)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_linear_scan_matches_loop(name):
    rng = rng_stream(0, "scan")
    U = rng.standard_normal((2, 30, 3))
    g = np.array([0.0, 0.5, 1.0])
    H = BACKENDS[name].linear_scan(U, g)
    ref = np.zeros_like(U)
    for t in range(30):
        ref[:, t] = (g * ref[:, t - 1] if t else 0) + U[:, t]
    assert np.allclose(H, ref, rtol=1e-13, atol=1e-13)


def test_pure_python_fallback_selected_by_env():
    import os
    import subprocess
    import sys

    env = dict(os.environ, SUPERLINEAR_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import superlinear; print(superlinear.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
