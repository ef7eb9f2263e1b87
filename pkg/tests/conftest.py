import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))
torch.set_num_threads(1)

from kappagan.graphdata import Graph  # noqa: E402

KAPPAS = [-2.0, -1.0, -0.1, 0.0, 0.1, 1.0]


def random_points(rng, n, dim, k, scale=0.9):
    """Points spread over a good part of the domain (ball of radius 1/sqrt(-k) when k < 0)."""
    if k < 0:
        d = rng.normal(size=(n, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = scale * rng.random((n, 1)) ** (1 / dim) / np.sqrt(-k)
        return torch.from_numpy(d * r)
    return torch.from_numpy(rng.normal(size=(n, dim)) * 0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def two_cliques():
    a = [(i, j) for i in range(10) for j in range(i + 1, 10)]
    b = [(i + 10, j + 10) for i, j in a]
    return Graph.from_edges(20, a + b + [(9, 10)])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
