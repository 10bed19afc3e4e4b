import numpy as np
import pytest

from superlinear.config import SequenceTensors, rng_stream


@pytest.fixture
def make_seq():
    def make(L, d=8, seed=0, name="test"):
        return SequenceTensors.random(L, d, rng_stream(seed, f"{name}/{L}/{d}"))

    return make


def naive_dense(Q, K, V):
    """Triple-loop causal attention, written independently of the vectorised oracle."""
    L, d = Q.shape
    out = np.zeros_like(V, dtype=np.float64)
    for i in range(L):
        logits = [sum(Q[i, c] * K[j, c] for c in range(d)) / np.sqrt(d) for j in range(i + 1)]
        m = max(logits)
        w = [np.exp(z - m) for z in logits]
        tot = sum(w)
        for j in range(i + 1):
            out[i] += (w[j] / tot) * V[j]
    return out


# PASS/FAIL lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
