import networkx as nx
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from icd_oracle.model import CompositeGraph

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_dag(n: int, p: float, rng: np.random.Generator) -> CompositeGraph:
    """Edges only go from lower to higher position in a random permutation."""
    perm = rng.permutation(n)
    g = CompositeGraph(n)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                g.add_edge(int(perm[i]), int(perm[j]))
    return g


def to_nx(graph: CompositeGraph) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(range(graph.n))
    g.add_edges_from(graph.edges())
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
