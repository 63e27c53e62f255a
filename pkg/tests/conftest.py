import numpy as np
import pytest

from ncla.graph import Graph


def random_graph(rng, n, density=0.4, n_features=4, n_classes=None):
    upper = np.triu(rng.random((n, n)) < density, 1)
    labels = None if n_classes is None else rng.integers(n_classes, size=n)
    return Graph.from_edges(n, np.argwhere(upper), rng.standard_normal((n, n_features)),
                            labels, n_classes)


def complete_graph(n, n_features=3, seed=0):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return Graph.from_edges(n, edges, rng.standard_normal((n, n_features)))


def edgeless_graph(n, n_features=3, seed=0):
    rng = np.random.default_rng(seed)
    return Graph.from_edges(n, [], rng.standard_normal((n, n_features)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
