import numpy as np
import pytest

from duallaguerre.graph import GraphDataset, synth_graph, twonode_dataset


@pytest.fixture
def twonode() -> GraphDataset:
    return twonode_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_graph(n: int, p: float, seed: int) -> GraphDataset:
    """Erdos-Renyi graph with Gaussian features; may contain isolated nodes."""
    r = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = r.random(iu.size) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    feats = r.standard_normal((n, 3))
    labels = r.integers(0, 2, n)
    return GraphDataset(n, edges, feats, labels, 2)


@pytest.fixture
def small_synth() -> GraphDataset:
    return synth_graph(40, 2, 0.7, 3, feature_dim=4, seed=5)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
