import numpy as np
import pytest

from conftest import fd_gradcheck, random_routing
from trafficdpc.autodiff import Tensor, backward
from trafficdpc import autodiff as ad
from trafficdpc.baselines import dijkstra_theta
from trafficdpc.model import NmfdModel, StepDiagnostics, mfd_flow
from trafficdpc.network import BENCHMARK_MFD, RegionGraph

A_BENCH, B_BENCH, C_BENCH = BENCHMARK_MFD


def single_region_graph():
    # an isolated region is fine for dynamics tests; silence the
    # connectivity warning by building a 1-region graph directly
    return RegionGraph(np.zeros((1, 1)), [BENCHMARK_MFD])


class TestMfdFlow:
    def test_zero_accumulation(self):
        assert mfd_flow(BENCHMARK_MFD, Tensor(0.0)).item() == 0.0

    def test_benchmark_value_at_1000(self):
        # oracle: direct polynomial evaluation
        expected = np.polyval([A_BENCH, B_BENCH, C_BENCH, 0.0], 1000.0)
        got = mfd_flow(BENCHMARK_MFD, Tensor(1000.0)).item()
        assert np.isclose(got, expected, rtol=1e-12)
        assert np.isclose(got, 3.41313, atol=1e-9)

    def test_critical_accumulation(self, bench_graph):
        # oracle: dense grid argmax, independent of the quadratic formula
        xs = np.linspace(0.0, 12000.0, 240001)
        grid = np.polyval([A_BENCH, B_BENCH, C_BENCH, 0.0], xs)
        x_crit = bench_graph.critical_accumulation()[0]
        assert abs(x_crit - xs[np.argmax(grid)]) < 0.5
        assert np.isclose(x_crit, 3.40e3, rtol=0.01)

    def test_matches_region_graph_outflow(self, bench_graph):
        model = NmfdModel(bench_graph)
        xs = np.tile(np.linspace(0.0, 2.5e4, 60)[:, None], (1, 7))
        tensor_flow = model.mfd(Tensor(xs)).data
        assert np.allclose(tensor_flow, bench_graph.outflow(xs), atol=1e-12)

    def test_declines_to_zero_past_jam_onset(self, bench_graph):
        onset = bench_graph.jam_onset[0]
        width = bench_graph.jam_width[0]
        assert bench_graph.outflow(onset + width, region=0) == 0.0
        assert bench_graph.outflow(onset + 2 * width, region=0) == 0.0
        g_mid = bench_graph.outflow(onset + 0.5 * width, region=0)
        assert 0.0 < g_mid < bench_graph.outflow(onset, region=0)


class TestRouteFlows:
    def test_empty_region_emits_nothing(self, triangle_graph):
        model = NmfdModel(triangle_graph)
        rng = np.random.default_rng(0)
        theta = random_routing(triangle_graph, rng)
        x = np.zeros((3, 3))
        m, m_trip = model.route_flows(Tensor(x), Tensor(theta))
        assert np.all(m.data == 0.0) and np.all(m_trip.data == 0.0)

    def test_single_region_completion(self):
        graph = single_region_graph()
        model = NmfdModel(graph)
        x = np.array([[100.0]])
        _, m_trip = model.route_flows(Tensor(x), Tensor(np.zeros((1, 1, 1))))
        assert np.isclose(m_trip.data[0], graph.outflow(100.0, region=0))

    def test_two_region_hand_value(self):
        graph = RegionGraph.from_edges(2, [(0, 1)], BENCHMARK_MFD)
        model = NmfdModel(graph)
        # x_11 = 50 (dest self), x_12 = 50, theta_122 = 1 -> m_122 = 0.5*g(100)
        x = np.array([[50.0, 50.0], [0.0, 0.0]])
        theta = np.zeros((2, 2, 2))
        theta[0, 1, 1] = 1.0
        theta[0, 1, 0] = 1.0
        m, _ = model.route_flows(Tensor(x), Tensor(theta))
        assert np.isclose(m.data[0, 1, 1], 0.5 * graph.outflow(100.0, region=0))


class TestDynamics:
    def test_empty_network_fixed_point(self, triangle_graph):
        model = NmfdModel(triangle_graph)
        theta = dijkstra_theta(triangle_graph)
        xdot = model.dynamics(Tensor(np.zeros((3, 3))), Tensor(np.full((3, 3), 0.5)),
                              Tensor(theta), Tensor(np.zeros((3, 3))))
        assert np.all(xdot.data == 0.0)

    def test_single_region_derivative(self):
        graph = single_region_graph()
        model = NmfdModel(graph)
        d = np.array([[5.0]])
        x = np.array([[100.0]])
        xdot = model.dynamics(Tensor(x), Tensor(np.ones((1, 1))),
                              Tensor(np.zeros((1, 1, 1))), Tensor(d))
        assert np.isclose(xdot.data[0, 0], 5.0 - graph.outflow(100.0, region=0))

    @pytest.mark.parametrize("seed", range(4))
    def test_conservation_u_one(self, seed):
        rng = np.random.default_rng(seed)
        graph = RegionGraph.complete(4, BENCHMARK_MFD)
        model = NmfdModel(graph)
        x = rng.uniform(0.0, 100.0, (4, 4))
        d = rng.uniform(0.0, 10.0, (4, 4))
        theta = random_routing(graph, rng)
        xdot = model.dynamics(Tensor(x), Tensor(np.ones((4, 4))), Tensor(theta),
                              Tensor(d))
        _, m_trip = model.route_flows(Tensor(x), Tensor(theta))
        assert abs(xdot.data.sum() - (d.sum() - m_trip.data.sum())) < 1e-9


class TestStep:
    def test_fixed_point_steady(self, triangle_graph):
        model = NmfdModel(triangle_graph)
        theta = dijkstra_theta(triangle_graph)
        x = np.zeros((3, 3))
        out = model.step(Tensor(x), Tensor(np.full((3, 3), 0.5)), Tensor(theta),
                         Tensor(np.zeros((3, 3))), dt=30.0)
        assert np.array_equal(out.data, x)

    def test_euler_hand_value(self):
        graph = single_region_graph()
        model = NmfdModel(graph)
        x = np.array([[100.0]])
        out = model.step(Tensor(x), Tensor(np.ones((1, 1))),
                         Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 1))),
                         dt=30.0, method="euler")
        expected = 100.0 - 30.0 * graph.outflow(100.0, region=0)
        assert np.isclose(out.data[0, 0], expected)

    def test_rk4_beats_euler_against_fine_reference(self, triangle_graph):
        model = NmfdModel(triangle_graph)
        theta = dijkstra_theta(triangle_graph)
        rng = np.random.default_rng(1)
        x0 = rng.uniform(500.0, 2000.0, (3, 3))
        u = Tensor(np.full((3, 3), 0.5))
        d = Tensor(rng.uniform(0.0, 2.0, (3, 3)))

        def integrate(dt, steps, method):
            x = Tensor(x0.copy())
            for _ in range(steps):
                x = model.step(x, u, Tensor(theta), d, dt, method=method)
            return x.data

        reference = integrate(0.1, 300, "euler")
        coarse_euler = integrate(30.0, 1, "euler")
        coarse_rk4 = integrate(30.0, 1, "rk4")
        err_euler = np.abs(coarse_euler - reference).max()
        err_rk4 = np.abs(coarse_rk4 - reference).max()
        assert err_rk4 < err_euler

    def test_nonnegativity_and_clamp_count(self):
        graph = single_region_graph()
        model = NmfdModel(graph)
        diag = StepDiagnostics()
        # large dt drains the region past zero -> clamped
        out = model.step(Tensor(np.array([[5.0]])), Tensor(np.ones((1, 1))),
                         Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 1))),
                         dt=3000.0, diagnostics=diag)
        assert np.all(out.data >= 0.0)
        assert diag.clamp_events == 1

    def test_invalid_dt_and_method(self, triangle_graph):
        model = NmfdModel(triangle_graph)
        args = (Tensor(np.zeros((3, 3))), Tensor(np.ones((3, 3))),
                Tensor(dijkstra_theta(triangle_graph)), Tensor(np.zeros((3, 3))))
        with pytest.raises(ValueError):
            model.step(*args, dt=-1.0)
        with pytest.raises(ValueError):
            model.step(*args, dt=30.0, method="heun")

    def test_monotone_emptying_left_of_peak(self, triangle_graph):
        model = NmfdModel(triangle_graph)
        theta = dijkstra_theta(triangle_graph)
        rng = np.random.default_rng(2)
        x = Tensor(rng.uniform(100.0, 900.0, (3, 3)))  # well left of the peak
        u = Tensor(np.full((3, 3), 0.7))
        d = Tensor(np.zeros((3, 3)))
        prev = x.data.sum()
        for _ in range(20):
            x = model.step(x, u, Tensor(theta), d, dt=30.0)
            total = x.data.sum()
            assert total <= prev + 1e-9
            prev = total


def test_rollout_gradient_matches_fd(triangle_graph):
    model = NmfdModel(triangle_graph)
    theta = dijkstra_theta(triangle_graph)
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0.0, 500.0, (3, 3))
    d = rng.uniform(0.0, 5.0, (5, 3, 3))
    u = Tensor(rng.uniform(0.2, 0.8, (3, 3)), requires_grad=True)

    def build():
        x = Tensor(x0)
        loss = Tensor(0.0)
        for k in range(5):
            x = model.step(x, u, Tensor(theta), Tensor(d[k]), dt=30.0)
            loss = loss + ad.l1_norm(x)
        return loss

    assert fd_gradcheck(build, [u]) < 1e-4
