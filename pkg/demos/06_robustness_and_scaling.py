"""
Robustness to demand shift and region-count scaling
===================================================

Two smaller versions of the remaining experiments: perturb the spawn
schedule with increasing Gaussian noise and measure the improvement of a
trained policy over no-control per noised scenario, then time per-step
controller outputs on growing fully-connected networks.

A few minutes end to end; grids are trimmed relative to the full sweeps.
"""

import numpy as np

from trafficdpc import (PolicyController, TrainConfig, benchmark7,
                        dijkstra_theta, robustness_sweep, scaling_benchmark,
                        train)

scenario = benchmark7()
graph = scenario.graph()
spawn = scenario.spawn_table()

print("training a quick perimeter policy ...")
cfg = TrainConfig(horizon=scenario.total_steps, batch_size=1, chunk_size=1,
                  epochs=150, lr=0.02, sigma_obs=0.25, mode="pc", seed=0,
                  early_stop_patience=10 ** 9)
policy, _ = train(cfg, graph, spawn, dt=scenario.dt_s, bounds=scenario.bounds(),
                  theta_default=dijkstra_theta(graph))

# %% spawn-noise robustness (trimmed grid, 5 samples per sigma)
rows = robustness_sweep(PolicyController(policy), graph, spawn,
                        steps=scenario.total_steps, dt=scenario.dt_s,
                        sigmas=[0.0, 0.5, 2.0, 5.0], samples=5,
                        sigma_obs=scenario.obs_noise_std_veh, seed=0,
                        bounds=scenario.bounds())
print("\nsigma  mean improvement (veh*s)   95% CI")
for row in rows:
    print(f"{row.sigma:5.2f}  {row.mean:22.4g}   +/- {row.ci95:.3g}")

# %% controller wall-time scaling on fully-connected networks
print("\nper-step controller output time:")
results = scaling_benchmark(region_counts=[2, 8, 32],
                            controllers=("dpc-pc", "dpc-pcrg", "mpc-pc"),
                            steps=5, seed=0)
for row in results:
    shown = "DNF" if row.median_step_s is None else f"{row.median_step_s * 1e3:8.2f} ms"
    print(f"R={row.regions:3d}  {row.controller:9s}  {shown}")
