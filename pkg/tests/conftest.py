import numpy as np
import pytest

from trafficdpc.autodiff import Tensor, backward
from trafficdpc.network import BENCHMARK_MFD, RegionGraph
from trafficdpc.scenario import benchmark7


def fd_gradcheck(build, leaves, h=1e-5, tol=1e-4):
    """Compare backward() gradients against central finite differences.

    `build` re-evaluates the scalar loss from the current leaf values;
    returns the worst relative error over every scalar entry of `leaves`.
    """
    grads = backward(build())
    worst = 0.0
    for leaf in leaves:
        assert leaf in grads, "leaf missing from gradient map"
        g = grads[leaf]
        flat = leaf.data.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = build().item()
            flat[idx] = orig - h
            down = build().item()
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            ad_g = g.ravel()[idx]
            denom = max(1e-8, abs(ad_g), abs(fd))
            worst = max(worst, abs(ad_g - fd) / denom)
    return worst


@pytest.fixture(scope="session")
def bench_scenario():
    return benchmark7()


@pytest.fixture(scope="session")
def bench_graph(bench_scenario):
    return bench_scenario.graph()


@pytest.fixture()
def triangle_graph():
    adjacency = np.ones((3, 3)) - np.eye(3)
    return RegionGraph(adjacency, np.tile(BENCHMARK_MFD, (3, 1)))


def random_routing(graph, rng):
    """A random member of the routing constraint set for `graph`."""
    R = graph.regions
    theta = rng.uniform(0.1, 1.0, (R, R, R)) * graph.adjacency[:, :, None]
    return theta / theta.sum(axis=1, keepdims=True)
