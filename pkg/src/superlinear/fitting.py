"""Log-log least squares used by every scaling measurement."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import DegenerateFit


def fit_exponent(lengths: Iterable[float], counts: Iterable[float], min_points: int = 3) -> tuple[float, float]:
    """Slope and R^2 of an OLS fit of log(count) against log(length).

    Args:
        lengths: sequence lengths (or positions), all positive.
        counts: measured totals aligned with ``lengths``, all positive.
        min_points: minimum number of distinct lengths required.

    Raises:
        DegenerateFit: too few points, repeated lengths or non-positive data.
    """
    x = np.asarray(list(lengths), dtype=np.float64)
    y = np.asarray(list(counts), dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateFit("lengths and counts must be aligned 1-D sequences")
    if len(np.unique(x)) < max(min_points, 2) or len(np.unique(x)) != len(x):
        raise DegenerateFit(f"need at least {max(min_points, 2)} distinct lengths, got {x.tolist()}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DegenerateFit("log-log fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    cx, cy = lx - lx.mean(), ly - ly.mean()
    slope = float(cx @ cy / (cx @ cx))
    resid = cy - slope * cx
    ss_tot = float(cy @ cy)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return slope, r2
