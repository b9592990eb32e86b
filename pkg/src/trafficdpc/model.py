"""Differentiable NMFD traffic model.

States are (..., R, R) arrays x[i, j] = vehicles currently in region i whose
destination is region j; leading axes (e.g. a batch) broadcast through every
operation.  Controls are perimeter rates u[i, h] on adjacent pairs and
routing ratios theta[i, h, j] on the simplex over next hops h for each
(current, destination) pair.

All operations run on autodiff tensors so an N-step rollout loss can be
backpropagated to policy weights or to shooting variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import RegionGraph


@dataclass
class ControlInput:
    """Perimeter rates u (R, R) and routing ratios theta (R, R, R)."""
    u: np.ndarray
    theta: np.ndarray


@dataclass
class StepDiagnostics:
    """Counters accumulated across integration steps."""
    clamp_events: int = 0


def mfd_flow(coeffs, x, jam=None):
    """MFD outflow a*x^3 + b*x^2 + c*x floored at 0, as an autodiff op.

    `coeffs` is (a, b, c) scalars or arrays broadcasting against `x`.
    `jam`, when given, is (onset, flow_at_onset, width): past the cubic's
    local minimum the flow declines linearly to zero instead of riding the
    cubic's unphysical rising tail (see RegionGraph.outflow).
    """
    a, b, c = coeffs
    x = ad.as_tensor(x)
    if jam is None:
        poly = ad.mul(a, x ** 3) + ad.mul(b, x ** 2) + ad.mul(c, x)
        return ad.clamp_min(poly, 0.0)
    onset, flow0, width = jam
    x_base = ad.minimum(x, Tensor(onset))
    base = ad.clamp_min(ad.mul(a, x_base ** 3) + ad.mul(b, x_base ** 2)
                        + ad.mul(c, x_base), 0.0)
    over = ad.clamp_min(x - Tensor(onset), 0.0)
    return ad.clamp_min(base - ad.mul(over, flow0 / width), 0.0)


class NmfdModel:
    """NMFD dynamics over a fixed region graph.

    Precomputes the constant masks the vectorized dynamics need: the
    adjacency mask on theta, the diagonal selector for trip completions and
    the source!=destination exclusion on transfer inflows.
    """

    def __init__(self, graph: RegionGraph):
        self.graph = graph
        R = graph.regions
        self._a = graph.mfd_coeffs[:, 0]
        self._b = graph.mfd_coeffs[:, 1]
        self._c = graph.mfd_coeffs[:, 2]
        # finite sentinels for regions without a jam branch (onset at inf)
        finite = np.isfinite(graph.jam_onset)
        self._jam = (np.where(finite, graph.jam_onset, 1e15),
                     graph.jam_flow,
                     np.where(finite, graph.jam_width, 1e15))
        self._eye = np.eye(R)
        self._offdiag = 1.0 - self._eye
        # inflow x_ij gains u_hi * m_hij only for source regions h != j
        self._inflow_mask = 1.0 - self._eye[:, None, :]  # [h, i, j] -> h != j
        # theta support: h adjacent to i, and no self-routing theta_iij
        self._theta_mask = (graph.adjacency[:, :, None]
                            * np.ones((R, R, R)))

    def mfd(self, x_i):
        """Per-region outflow (veh/s) from per-region accumulation (..., R)."""
        return mfd_flow((self._a, self._b, self._c), x_i, jam=self._jam)

    def route_flows(self, x, theta):
        """Transfer flows m[..., i, h, j] and trip completions m_trip[..., i].

        m_ihj = theta_ihj * (x_ij / x_i) * g_i(x_i);  m_ii = (x_ii / x_i) * g_i.
        Empty regions (x_i ~ 0) emit exactly zero flow via the guarded ratio.
        """
        x = ad.as_tensor(x)
        theta = ad.as_tensor(theta)
        x_i = x.sum(axis=-1, keepdims=True)
        ratio = ad.guarded_div(x, x_i)                      # (..., i, j)
        g = self.mfd(x.sum(axis=-1))                        # (..., i)
        masked = ad.masked_select(theta, self._theta_mask)
        m = ad.mul(ad.mul(masked, ad.expand_dims(ratio, -2)),
                   ad.expand_dims(ad.expand_dims(g, -1), -1))
        m_trip = ad.mul(ad.masked_select(ratio, self._eye).sum(axis=-1), g)
        return m, m_trip

    def dynamics(self, x, u, theta, d):
        """State derivative (veh/s) of the NMFD model.

        xdot_ii = d_ii - m_ii + sum_h u_hi m_hii
        xdot_ij = d_ij - sum_h u_ih m_ihj + sum_{h != j} u_hi m_hij
        """
        x, u, d = ad.as_tensor(x), ad.as_tensor(u), ad.as_tensor(d)
        m, m_trip = self.route_flows(x, theta)
        flows = ad.mul(ad.expand_dims(u, -1), m)            # [..., src, dst, j]
        outflow = ad.masked_select(flows.sum(axis=-2), self._offdiag)
        inflow = ad.masked_select(flows, self._inflow_mask).sum(axis=-3)
        completions = ad.mul(ad.expand_dims(m_trip, -1), self._eye)
        return d - outflow - completions + inflow

    def step(self, x, u, theta, d, dt: float, method: str = "euler",
             diagnostics: StepDiagnostics | None = None):
        """Integrate one step of length dt (s) and clamp the state at zero.

        The clamp keeps states physical when the integrator overshoots an
        emptying region; it is a max-with-0, so the step stays differentiable
        almost everywhere.
        """
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        x = ad.as_tensor(x)
        if method == "euler":
            x_next = x + ad.mul(self.dynamics(x, u, theta, d), dt)
        elif method == "rk4":
            k1 = self.dynamics(x, u, theta, d)
            k2 = self.dynamics(x + ad.mul(k1, 0.5 * dt), u, theta, d)
            k3 = self.dynamics(x + ad.mul(k2, 0.5 * dt), u, theta, d)
            k4 = self.dynamics(x + ad.mul(k3, dt), u, theta, d)
            x_next = x + ad.mul(k1 + ad.mul(k2, 2.0) + ad.mul(k3, 2.0) + k4, dt / 6.0)
        else:
            raise ValueError(f"unknown integration method '{method}'")
        if diagnostics is not None:
            diagnostics.clamp_events += int((x_next.data < 0).sum())
        return ad.clamp_min(x_next, 0.0)


class NmfdSimulator:
    """Stateful wrapper driving the NMFD model as an evaluation plant."""

    def __init__(self, graph: RegionGraph, method: str = "euler"):
        self.graph = graph
        self.model = NmfdModel(graph)
        self.method = method
        self.state = np.zeros((graph.regions, graph.regions))
        self.clamp_events = 0
        self.renorm_events = 0

    def reset(self, x0: np.ndarray | None = None):
        R = self.model.graph.regions
        self.state = np.zeros((R, R)) if x0 is None else np.array(x0, dtype=np.float64)
        self.clamp_events = 0

    def observe(self) -> np.ndarray:
        return self.state.copy()

    def total(self) -> float:
        return float(self.state.sum())

    def per_region(self) -> np.ndarray:
        return self.state.sum(axis=-1)

    def step(self, u: np.ndarray, theta: np.ndarray, d: np.ndarray, dt: float):
        diag = StepDiagnostics()
        out = self.model.step(Tensor(self.state), Tensor(u), Tensor(theta),
                              Tensor(d), dt, method=self.method, diagnostics=diag)
        self.clamp_events += diag.clamp_events
        self.state = out.data
