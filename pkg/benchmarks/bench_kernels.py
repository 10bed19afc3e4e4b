"""Time the compiled and pure-Python kernel backends on identical inputs.

Usage: python3 benchmarks/bench_kernels.py [--L 16384] [--repeats 3]

Prints one CSV row per (kernel, backend) with the best wall time and the
speedup of the compiled backend. Results are also checked for equality.
"""

import argparse
import sys
import time

import numpy as np

from superlinear import kernels
from superlinear.anchors import stride_offsets
from superlinear.config import EXTENDED, rng_stream
from superlinear.spans import extent_tables


def best_time(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b) if a.dtype.kind in "iub" else np.allclose(a, b, rtol=1e-12, atol=1e-12)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, default=16384)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    mods = kernels.backends()
    if "cython" not in mods:
        print("compiled backend not built; only the Python backend is available", file=sys.stderr)
    cfg = EXTENDED
    L = args.L
    off = stride_offsets(cfg.search_exponent, L - 1)
    back, fwd = extent_tables(L, cfg)
    pos = np.arange(L, dtype=np.int64)
    u = rng_stream(0, "bench/u").random((L, cfg.top_k))
    X = rng_stream(0, "bench/x").standard_normal((4, L, 64))
    decay = rng_stream(0, "bench/decay").uniform(0.8, 0.999, 64)

    cases = {
        "audit_range": lambda m: m.audit_range(L, off, back, fwd, cfg.window, False),
        "route_geometry": lambda m: m.route_geometry(pos, off, back, fwd, cfg.window, cfg.top_k, u),
        "linear_scan": lambda m: m.linear_scan(X, decay),
    }
    print("kernel,backend,L,seconds,speedup,match")
    for name, fn in cases.items():
        times, outs = {}, {}
        for label, mod in mods.items():
            times[label], outs[label] = best_time(lambda: fn(mod), args.repeats)
        match = len(outs) < 2 or same(outs["cython"], outs["python"])
        for label in mods:
            speed = times["python"] / times[label] if "python" in times else 1.0
            print(f"{name},{label},{L},{times[label]:.6f},{speed:.2f},{int(match)}")


if __name__ == "__main__":
    main()
