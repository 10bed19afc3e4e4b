import numpy as np
import pytest
from hypothesis import given, strategies as st

from superlinear.errors import DegenerateFit
from superlinear.fitting import fit_exponent


def test_exact_power_law():
    L = np.array([1024, 2048, 4096, 8192], dtype=float)
    slope, r2 = fit_exponent(L, L**1.5)
    assert abs(slope - 1.5) < 1e-9 and abs(r2 - 1) < 1e-12


def test_exact_linear():
    L = [100, 1000, 10000]
    slope, _ = fit_exponent(L, [7 * x for x in L])
    assert abs(slope - 1.0) < 1e-9


@given(st.floats(0.1, 3.0), st.floats(0.01, 100))
def test_recovers_any_exponent(a, c):
    L = np.geomspace(10, 1e5, 6)
    assert abs(fit_exponent(L, c * L**a)[0] - a) < 1e-9


@pytest.mark.parametrize(
    "lengths, counts",
    [([10, 20], [1, 2]), ([10, 10, 10], [1, 2, 3]), ([10, 20, 20], [1, 2, 3]), ([10, 20, 30], [1, 0, 3])],
)
def test_degenerate(lengths, counts):
    with pytest.raises(DegenerateFit):
        fit_exponent(lengths, counts)
