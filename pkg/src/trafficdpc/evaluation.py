"""Closed-loop evaluation, robustness sweep and region-count scaling benchmark.

Controllers observe the plant projection plus additive Gaussian measurement
noise; the plant itself evolves noise-free, so given a control sequence the
trajectory is the ground truth.  All sweeps are seeded and reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baselines import MpcConfig, MpcController, NoControlController, dijkstra_theta
from .model import ControlInput, NmfdSimulator
from .network import ControlBounds, RegionGraph, random_mfd
from .plant import AnmfdSimulator
from .policy import ControlPolicy


class PolicyController:
    """Wraps a trained policy as a stateless per-step controller.

    PC-mode policies are paired with a fixed default routing tensor
    (shortest paths unless overridden).
    """

    def __init__(self, policy: ControlPolicy, theta_default: np.ndarray | None = None):
        self.policy = policy
        if policy.mode == "pc":
            self.theta_default = (theta_default if theta_default is not None
                                  else dijkstra_theta(policy.graph))
        else:
            self.theta_default = None
        self.forward_calls = 0

    def control(self, x_obs: np.ndarray, k: int = 0) -> ControlInput:
        u, theta = self.policy.infer(x_obs)
        self.forward_calls += 1
        if theta is None:
            theta = self.theta_default
        return ControlInput(u=u, theta=theta)


@dataclass
class EvalResult:
    """Closed-loop metrics; series are indexed by timestep (length T)."""
    step_total_veh: np.ndarray
    region_traj_veh: np.ndarray
    total_accumulation_veh_s: float
    final_accumulation_veh: float
    controller_step_times_s: np.ndarray
    clamp_events: int = 0
    renorm_events: int = 0

    @property
    def controller_time_s(self) -> float:
        return float(self.controller_step_times_s.sum())


def evaluate(controller, plant, spawn: np.ndarray, steps: int, dt: float,
             sigma_obs: float = 0.0, seed: int = 0,
             x0: np.ndarray | None = None) -> EvalResult:
    """Run `controller` against `plant` for `steps` timesteps.

    plant is any simulator exposing reset/observe/step/total/per_region
    (the acyclic plant or the NMFD model itself for ablations).  The
    observation is the collapsed state plus unclipped Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    plant.reset(x0)
    totals = np.empty(steps)
    regions = np.empty((steps, plant.graph.regions))
    times = np.empty(steps)
    for k in range(steps):
        obs = plant.observe()
        if sigma_obs > 0:
            obs = obs + rng.normal(0.0, sigma_obs, obs.shape)
        tic = time.monotonic()
        ctrl = controller.control(obs, k)
        times[k] = time.monotonic() - tic
        d = spawn[k] if k < spawn.shape[0] else np.zeros_like(spawn[0])
        plant.step(ctrl.u, ctrl.theta, d, dt)
        totals[k] = plant.total()
        regions[k] = plant.per_region()
    return EvalResult(
        step_total_veh=totals,
        region_traj_veh=regions,
        total_accumulation_veh_s=float(totals.sum() * dt),
        final_accumulation_veh=float(totals[-1]),
        controller_step_times_s=times,
        clamp_events=plant.clamp_events,
        renorm_events=getattr(plant, "renorm_events", 0),
    )


# ---------------------------------------------------------------------------
# robustness to spawn-schedule perturbation
# ---------------------------------------------------------------------------

@dataclass
class RobustnessPoint:
    sigma: float
    improvements: np.ndarray          # no-control total minus policy total, per sample

    @property
    def mean(self) -> float:
        return float(self.improvements.mean())

    @property
    def ci95(self) -> float:
        n = self.improvements.size
        if n < 2:
            return 0.0
        return float(1.96 * self.improvements.std(ddof=1) / np.sqrt(n))


def perturb_spawn(spawn: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Additive Gaussian noise on the schedule, clipped at zero."""
    if sigma == 0:
        return spawn.copy()
    return np.maximum(spawn + rng.normal(0.0, sigma, spawn.shape), 0.0)


def robustness_sweep(controller, graph: RegionGraph, nominal_spawn: np.ndarray,
                     steps: int, dt: float, sigmas=None, samples: int = 20,
                     sigma_obs: float = 0.25, seed: int = 0,
                     bounds: ControlBounds | None = None) -> list:
    """Improvement over no-control under increasingly perturbed schedules.

    Each perturbed schedule is evaluated with both the given controller and
    no-control, so the improvement is normalized per noised scenario.
    """
    if sigmas is None:
        sigmas = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0]
    nc = NoControlController(graph, bounds)
    rows = []
    for s_idx, sigma in enumerate(sigmas):
        improvements = np.empty(samples if sigma > 0 else 1)
        for sample in range(improvements.size):
            rng = np.random.default_rng([seed, s_idx, sample])
            spawn = perturb_spawn(nominal_spawn, sigma, rng)
            eval_seed = int(np.random.default_rng([seed, s_idx, sample, 1]).integers(2**31))
            res_pol = evaluate(controller, AnmfdSimulator(graph), spawn, steps, dt,
                               sigma_obs=sigma_obs, seed=eval_seed)
            res_nc = evaluate(nc, AnmfdSimulator(graph), spawn, steps, dt,
                              sigma_obs=sigma_obs, seed=eval_seed)
            improvements[sample] = (res_nc.total_accumulation_veh_s
                                    - res_pol.total_accumulation_veh_s)
        rows.append(RobustnessPoint(sigma=float(sigma), improvements=improvements))
    return rows


# ---------------------------------------------------------------------------
# region-count scaling benchmark
# ---------------------------------------------------------------------------

@dataclass
class ScalingRow:
    regions: int
    controller: str
    median_step_s: float | None       # None marks DNF
    steps_timed: int = 0


def scaling_benchmark(region_counts=None, controllers=("dpc-pc", "dpc-pcrg",
                                                       "mpc-pc", "mpc-pcrg"),
                      trials: int = 1, steps: int = 10, seed: int = 0,
                      mpc_region_limits=None, step_timeout_s: float = 300.0) -> list:
    """Per-step controller wall time on random fully-connected networks.

    Initial states are uniform on [0, 100) per entry; the stepped system is
    the NMFD model.  MPC rows above their configured region limit are marked
    DNF without being run (mirroring solver blow-up); a measured step above
    `step_timeout_s` also DNFs.  The first MPC solve (cold start) is excluded
    from the timings, as is all controller construction.
    """
    if region_counts is None:
        region_counts = [2, 4, 8, 16, 32, 64]
    if mpc_region_limits is None:
        mpc_region_limits = {"mpc-pc": 16, "mpc-pcrg": 8}
    rows = []
    for R in region_counts:
        rng = np.random.default_rng([seed, R])
        coeffs = np.stack([random_mfd(rng) for _ in range(R)])
        graph = RegionGraph.complete(R, coeffs)
        x0 = rng.uniform(0.0, 100.0, (R, R))
        spawn = np.zeros((steps, R, R))
        for name in controllers:
            limit = mpc_region_limits.get(name)
            if limit is not None and R > limit:
                rows.append(ScalingRow(regions=R, controller=name, median_step_s=None))
                continue
            samples = []
            dnf = False
            for trial in range(trials):
                ctrl = _make_scaling_controller(name, graph, spawn, seed=seed + trial)
                sim = NmfdSimulator(graph)
                sim.reset(x0)
                skip_first = name.startswith("mpc")
                for k in range(steps):
                    obs = sim.observe()
                    tic = time.monotonic()
                    ctrl_input = ctrl.control(obs, k)
                    elapsed = time.monotonic() - tic
                    if not (skip_first and k == 0):
                        samples.append(elapsed)
                    if elapsed > step_timeout_s:
                        dnf = True
                        break
                    sim.step(ctrl_input.u, ctrl_input.theta, spawn[k], dt=30.0)
                if dnf:
                    break
            rows.append(ScalingRow(
                regions=R, controller=name,
                median_step_s=None if dnf else float(np.median(samples)),
                steps_timed=0 if dnf else len(samples)))
    return rows


def _make_scaling_controller(name: str, graph: RegionGraph, spawn: np.ndarray,
                             seed: int):
    if name == "dpc-pc":
        return PolicyController(ControlPolicy(graph, mode="pc", seed=seed))
    if name == "dpc-pcrg":
        return PolicyController(ControlPolicy(graph, mode="pcrg", seed=seed))
    if name == "mpc-pc":
        return MpcController(graph, spawn, dt=30.0, mode="pc")
    if name == "mpc-pcrg":
        return MpcController(graph, spawn, dt=30.0, mode="pcrg")
    raise ValueError(f"unknown controller spec '{name}'")


# ---------------------------------------------------------------------------
# MFD annotation bands
# ---------------------------------------------------------------------------

@dataclass
class MfdBand:
    """Accumulation interval within 10% of peak flow, plus the jam threshold."""
    x_crit: float
    g_max: float
    x_lo: float
    x_hi: float
    x_jam: float | None               # g drops below 1 veh/s past this (falling branch)


def optimal_band(graph: RegionGraph, ratio: float = 0.9) -> list:
    """Per-region accumulation band where g(x) >= ratio * max g."""
    bands = []
    for i in range(graph.regions):
        g = lambda x: float(graph.outflow(x, region=i))
        x_crit = float(graph.critical_accumulation()[i])
        g_max = g(x_crit)
        target = ratio * g_max
        fall_end = _falling_end(graph, i, x_crit)
        x_lo = _bisect_increasing(g, 0.0, x_crit, target)
        x_hi = _bisect_decreasing(g, x_crit, fall_end, target)
        x_jam = None
        if g(fall_end) < 1.0 <= g_max:
            x_jam = _bisect_decreasing(g, x_crit, fall_end, 1.0)
        bands.append(MfdBand(x_crit=x_crit, g_max=g_max, x_lo=x_lo, x_hi=x_hi,
                             x_jam=x_jam))
    return bands


def _falling_end(graph: RegionGraph, i: int, x_crit: float) -> float:
    """End of the falling branch: the cubic's local minimum, or a far bound."""
    a, b, c = graph.mfd_coeffs[i]
    if abs(a) > 1e-300:
        disc = 4.0 * b * b - 12.0 * a * c
        if disc >= 0:
            r = np.sqrt(disc)
            for cand in sorted([(-2.0 * b - r) / (6.0 * a), (-2.0 * b + r) / (6.0 * a)]):
                if cand > x_crit:
                    return float(cand)
    return x_crit * 10.0


def _bisect_increasing(g, lo, hi, target, tol=1e-9, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _bisect_decreasing(g, lo, hi, target, tol=1e-9, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)
