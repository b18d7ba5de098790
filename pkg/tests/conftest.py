import networkx as nx
import pytest

from gffperc.graph import RegularGraph, generate_random_regular
from gffperc.zagff import build_green


def tree_like_vertices(graph, radius):
    return [x for x in range(graph.n_vertices) if graph.tree_excess(graph.ball(x, radius)) == 0]


@pytest.fixture(scope='session')
def k4():
    return RegularGraph.from_networkx(nx.complete_graph(4))


@pytest.fixture(scope='session')
def petersen():
    return RegularGraph.from_networkx(nx.petersen_graph())


@pytest.fixture(scope='session')
def prism():
    return RegularGraph.from_networkx(nx.circular_ladder_graph(3))


@pytest.fixture(scope='session')
def small_graph():
    return generate_random_regular(3, 64, seed=11)


@pytest.fixture(scope='session')
def large_graph():
    return generate_random_regular(3, 1000, seed=5)


@pytest.fixture(scope='session')
def large_green(large_graph):
    return build_green(large_graph)


@pytest.fixture(scope='session')
def k4_green(k4):
    return build_green(k4)


@pytest.fixture(scope='session')
def petersen_green(petersen):
    return build_green(petersen)
