"""Acyclic NMFD plant model for closed-loop evaluation.

The plant tracks a four-index state x4[o, g, i, j]: vehicles with origin o,
previous region g, currently in region i, destined for j.  Routing forbids
hopping back to the previous region (no two-cycles) and to the trip origin;
the expanded routing tensor redistributes the removed mass over the
remaining admissible next hops (renormalization can be disabled to
reproduce the literal per-hop ratios).

Only evaluation runs on the plant, so everything here is plain numpy.
"""

from __future__ import annotations

import numpy as np

from .network import RegionGraph

_EPS = 1e-9


def expand_theta(graph: RegionGraph, theta: np.ndarray, renormalize: bool = True):
    """Expand routing ratios (R, R, R) to the acyclic tensor (R, R, R, R, R).

    theta5[o, g, i, h, j] routes the class (origin o, previous g, destination
    j) out of region i.  Next hops with h == g (backtracking) or h == o
    (returning to the origin) are zeroed; for fresh traffic (o == g == i)
    both exclusions are vacuous and the base ratios pass through unchanged.
    Rows that lose mass are renormalized so admissible hops sum to 1; rows
    with no admissible hop keep their traffic in place.

    Returns (theta5, renorm_rows) where renorm_rows counts (o, g, i, j) rows
    whose hop distribution lost mass to the exclusions.
    """
    A = graph.adjacency
    not_eq = 1.0 - np.eye(graph.regions)

    # base[o,g,i,h,j] = theta[i,h,j] * A[i,h] * (h != g) * (h != o) * (j != i)
    base = theta[None, None, :, :, :] * A[None, None, :, :, None]
    base = base * not_eq[:, None, None, :, None]      # h != o
    base = base * not_eq[None, :, None, :, None]      # h != g
    base = base * not_eq[None, None, :, None, :]      # j != i

    full = (theta[None, None, :, :, :] * A[None, None, :, :, None]).sum(axis=3)
    kept = base.sum(axis=3)
    transit = not_eq[None, None, :, :] > 0                # j != i rows only
    renorm_rows = int(np.sum((kept < full - 1e-12) & (full > _EPS) & transit))

    if renormalize:
        scale = np.divide(1.0, kept, out=np.zeros_like(kept), where=kept > _EPS)
        base = base * scale[:, :, :, None, :]
    return base, renorm_rows


def spawn_to_plant(d: np.ndarray) -> np.ndarray:
    """Lift a spawn matrix (R, R) into the plant state layout.

    Spawned vehicles are fresh traffic: origin = previous = current region.
    """
    R = d.shape[0]
    d4 = np.zeros((R, R, R, R))
    idx = np.arange(R)
    d4[idx, idx, idx, :] = d
    return d4


def plant_dynamics(graph: RegionGraph, x4: np.ndarray, u: np.ndarray,
                   theta5: np.ndarray, d: np.ndarray) -> np.ndarray:
    """State derivative of the acyclic plant (veh/s).

    Classes at their destination (j == i) complete trips at the unmodulated
    MFD share; all other classes transfer to admissible next hops at
    u[i, h]-modulated rates and re-enter as (previous = i, current = h).
    """
    R = graph.regions
    idx = np.arange(R)
    x_i = x4.sum(axis=(0, 1, 3))
    g = graph.outflow(x_i)
    per_veh = np.divide(g, x_i, out=np.zeros_like(g), where=x_i > _EPS)
    rate = x4 * per_veh[None, None, :, None]          # (x4 / x_i) * g_i

    # trip completions: classes with j == i
    comp = rate[:, :, idx, idx]                       # [o, g, i]
    comp4 = np.zeros_like(x4)
    comp4[:, :, idx, idx] = comp

    # transfers: flow[o,g,i,h,j] = u[i,h] * theta5[o,g,i,h,j] * rate[o,g,i,j]
    flow = theta5 * rate[:, :, :, None, :] * u[None, None, :, :, None]
    outflow = flow.sum(axis=3)
    inflow = flow.sum(axis=1)                         # arrives with previous = i

    return spawn_to_plant(d) - outflow - comp4 + inflow


def project_state(x4: np.ndarray) -> np.ndarray:
    """Collapse the plant state back to x[i, j] = sum over origins/previous.

    Follows the translation rule literally: origins and previous regions
    equal to the destination are excluded from the sums.
    """
    R = x4.shape[0]
    keep = 1.0 - np.eye(R)
    w = keep[:, None, None, :] * keep[None, :, None, :]   # (o != j) * (g != j)
    return (x4 * w).sum(axis=(0, 1))


class AnmfdSimulator:
    """Stateful acyclic-plant wrapper used by the evaluation loop."""

    def __init__(self, graph: RegionGraph, method: str = "euler",
                 renormalize_theta: bool = True):
        self.graph = graph
        self.method = method
        self.renormalize_theta = renormalize_theta
        R = graph.regions
        self.state = np.zeros((R, R, R, R))
        self.clamp_events = 0
        self.renorm_events = 0

    def reset(self, x0: np.ndarray | None = None):
        R = self.graph.regions
        self.state = np.zeros((R, R, R, R))
        if x0 is not None:
            idx = np.arange(R)
            self.state[idx, idx, idx, :] = np.asarray(x0, dtype=np.float64)
        self.clamp_events = 0
        self.renorm_events = 0

    def observe(self) -> np.ndarray:
        return project_state(self.state)

    def total(self) -> float:
        return float(self.state.sum())

    def per_region(self) -> np.ndarray:
        return self.state.sum(axis=(0, 1, 3))

    def step(self, u: np.ndarray, theta: np.ndarray, d: np.ndarray, dt: float):
        theta5, renorm_rows = expand_theta(self.graph, theta, self.renormalize_theta)
        self.renorm_events += renorm_rows
        f = lambda x: plant_dynamics(self.graph, x, u, theta5, d)
        if self.method == "euler":
            x_next = self.state + dt * f(self.state)
        elif self.method == "rk4":
            k1 = f(self.state)
            k2 = f(self.state + 0.5 * dt * k1)
            k3 = f(self.state + 0.5 * dt * k2)
            k4 = f(self.state + dt * k3)
            x_next = self.state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            raise ValueError(f"unknown integration method '{self.method}'")
        if not np.all(np.isfinite(x_next)):
            raise ArithmeticError("non-finite plant state after step")
        self.clamp_events += int((x_next < 0).sum())
        self.state = np.maximum(x_next, 0.0)
