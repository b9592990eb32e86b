"""Baseline controllers: no-control, shortest-path routing, receding-horizon MPC.

The MPC solves the horizon problem by projected-free direct shooting: the
decision variables are unconstrained logits mapped through the same sigmoid
scaling / masked softmax used by the policy decoders, so every iterate is
feasible by construction.  Consecutive solves warm-start from the shifted
previous solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .model import ControlInput, NmfdModel
from .network import ControlBounds, RegionGraph
from .training import AdamW


def dijkstra_theta(graph: RegionGraph) -> np.ndarray:
    """One-hot routing tensor from unit-weight shortest paths.

    theta[i, h, j] = 1 where h is the first hop of the shortest path from i
    to j; ties break toward the smallest next-hop index.  Rows for i == j
    (ignored by the dynamics) put their mass on the smallest neighbor so the
    tensor is a valid simplex member everywhere.
    """
    R = graph.regions
    theta = np.zeros((R, R, R))
    for j in range(R):
        dist = _bfs_distances(graph, j)
        if np.any(np.isinf(dist)):
            raise ValueError(f"graph is disconnected: region {j} unreachable")
        for i in range(R):
            neigh = graph.neighbors(i)
            if i == j:
                theta[i, neigh.min(), j] = 1.0
                continue
            best = neigh[np.argmin(dist[neigh])]  # argmin takes the first = smallest index
            theta[i, best, j] = 1.0
    return theta


def _bfs_distances(graph: RegionGraph, source: int) -> np.ndarray:
    dist = np.full(graph.regions, np.inf)
    dist[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for i in frontier:
            for h in graph.neighbors(i):
                if dist[h] == np.inf:
                    dist[h] = dist[i] + 1
                    nxt.append(int(h))
        frontier = nxt
    return dist


def no_control(graph: RegionGraph, bounds: ControlBounds | None = None) -> ControlInput:
    """Everything open: u at the upper limit everywhere, shortest-path routing."""
    bounds = bounds if bounds is not None else ControlBounds()
    R = graph.regions
    return ControlInput(u=np.full((R, R), bounds.u_max), theta=dijkstra_theta(graph))


class NoControlController:
    """Constant controller applying the no-control input at every step."""

    def __init__(self, graph: RegionGraph, bounds: ControlBounds | None = None):
        self._input = no_control(graph, bounds)

    def control(self, x_obs: np.ndarray, k: int = 0) -> ControlInput:
        return self._input


@dataclass
class MpcConfig:
    horizon: int = 8
    max_iters: int = 60
    tol: float = 1e-6               # relative loss change declaring convergence
    warm_start: bool = True
    lr: float = 0.2                 # Adam step size on the shooting logits
    method: str = "euler"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("MPC horizon must be >= 1")


class MpcController:
    """Receding-horizon MPC by direct shooting on the differentiable model.

    Minimizes the summed L1 state norm over the horizon rollout, applies the
    first control, and shifts the solution one step for the next call.
    Requires a forecast of the spawn schedule over the horizon.
    """

    def __init__(self, graph: RegionGraph, spawn_forecast: np.ndarray, dt: float,
                 cfg: MpcConfig | None = None, mode: str = "pc",
                 bounds: ControlBounds | None = None):
        if mode not in ("pc", "pcrg"):
            raise ValueError(f"unknown MPC mode '{mode}'")
        self.cfg = cfg if cfg is not None else MpcConfig()
        self.graph = graph
        self.mode = mode
        self.bounds = bounds if bounds is not None else ControlBounds()
        self.model = NmfdModel(graph)
        self.spawn = np.asarray(spawn_forecast, dtype=np.float64)
        self.dt = dt
        self.theta_default = dijkstra_theta(graph)
        R, H = graph.regions, self.cfg.horizon
        self._theta_mask = np.broadcast_to(graph.adjacency[:, :, None], (R, R, R))
        self._z_u = np.zeros((H, R, R))
        self._z_theta = np.zeros((H, R, R, R)) if mode == "pcrg" else None
        self.hit_iter_limit = False
        self.last_iterations = 0

    def _forecast_window(self, k: int) -> np.ndarray:
        H = self.cfg.horizon
        window = self.spawn[k:k + H]
        if window.shape[0] < H:   # past the schedule: hold the last known rates
            pad = np.repeat(self.spawn[-1:], H - window.shape[0], axis=0)
            window = np.concatenate([window, pad], axis=0)
        return window

    def _controls(self, z_u: Tensor, z_theta: Tensor | None):
        span = self.bounds.u_max - self.bounds.u_min
        u = ad.mul(ad.sigmoid(z_u), span) + self.bounds.u_min
        if z_theta is None:
            theta = Tensor(self.theta_default)
        else:
            theta = ad.masked_softmax(z_theta, self._theta_mask, axis=-2)
        return u, theta

    def _loss(self, x0: np.ndarray, window: np.ndarray, z_u_steps, z_theta_steps):
        x = Tensor(x0)
        loss = Tensor(0.0)
        for k in range(self.cfg.horizon):
            u, theta = self._controls(z_u_steps[k],
                                      None if z_theta_steps is None else z_theta_steps[k])
            x = self.model.step(x, u, theta, Tensor(window[k]), self.dt,
                                method=self.cfg.method)
            loss = loss + ad.l1_norm(x)
        return loss

    def solve(self, x_obs: np.ndarray, k: int):
        """Optimize the horizon controls from the observed state; returns
        (ControlInput for the first step, iterations used)."""
        window = self._forecast_window(k)
        H = self.cfg.horizon
        z_u_steps = [Tensor(self._z_u[t], requires_grad=True) for t in range(H)]
        z_theta_steps = None
        params = {f"u{t}": z_u_steps[t] for t in range(H)}
        if self.mode == "pcrg":
            z_theta_steps = [Tensor(self._z_theta[t], requires_grad=True) for t in range(H)]
            params.update({f"th{t}": z_theta_steps[t] for t in range(H)})
        opt = AdamW(params, lr=self.cfg.lr)
        name_of = {id(t): n for n, t in params.items()}

        prev = None
        best_value = np.inf
        best = None
        iters = 0
        self.hit_iter_limit = False
        for iters in range(1, self.cfg.max_iters + 1):
            loss = self._loss(x_obs, window, z_u_steps, z_theta_steps)
            value = loss.item()
            if value < best_value:
                best_value = value
                best = {n: t.data.copy() for n, t in params.items()}
            if prev is not None and abs(prev - value) <= self.cfg.tol * max(abs(prev), 1.0):
                break
            prev = value
            grads = {name_of[id(t)]: g for t, g in backward(loss).items()}
            opt.step(grads)
        else:
            self.hit_iter_limit = True
        self.last_iterations = iters

        for t in range(H):
            self._z_u[t] = best[f"u{t}"]
            if self.mode == "pcrg":
                self._z_theta[t] = best[f"th{t}"]

        u0, theta0 = self._controls(Tensor(self._z_u[0]),
                                    None if self.mode == "pc" else Tensor(self._z_theta[0]))
        first = ControlInput(u=u0.data.copy(), theta=theta0.data.copy())

        if self.cfg.warm_start:
            self._z_u[:-1] = self._z_u[1:]
            if self.mode == "pcrg":
                self._z_theta[:-1] = self._z_theta[1:]
        else:
            self._z_u[:] = 0.0
            if self.mode == "pcrg":
                self._z_theta[:] = 0.0
        return first, iters

    def control(self, x_obs: np.ndarray, k: int = 0) -> ControlInput:
        first, _ = self.solve(x_obs, k)
        return first
