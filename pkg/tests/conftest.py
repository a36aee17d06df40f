import numpy as np
import pytest

from exactsnn.core import EventBatch, NetworkSpec, NeuronParams, dense


def random_dense_net(rng, n_in, sizes, tau_s=0.1, thetas=None, cap=30, low=-1.0, high=1.0):
    layers, prev = [], n_in
    for i, size in enumerate(sizes):
        theta = thetas[i] if thetas is not None else float(rng.uniform(0.02, 2.0))
        p = NeuronParams(tau_s, theta, cap)
        layers.append(dense(prev, size, p, weights=rng.uniform(low, high, (prev, size))))
        prev = size
    return NetworkSpec(tuple(layers))


def random_events(rng, n_in, n_events, t_max):
    return EventBatch.from_unsorted(rng.integers(0, n_in, n_events), rng.uniform(0, t_max, n_events),
                                    n_in)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
