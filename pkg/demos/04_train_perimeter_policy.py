"""
Training a perimeter-control policy offline
===========================================

Differentiable predictive control in one script: roll the policy through the
differentiable network model for the full scenario horizon, backpropagate
the total-accumulation loss, and update the weights with Adam.  A couple of
minutes of CPU produces a policy that keeps the central region near its
critical accumulation and clears nearly all traffic.

Takes ~2 minutes; shrink `epochs` for a quicker look.
"""

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from trafficdpc import (AnmfdSimulator, NoControlController, PolicyController,
                        TrainConfig, benchmark7, dijkstra_theta, evaluate,
                        optimal_band, train)

scenario = benchmark7()
graph = scenario.graph()
spawn = scenario.spawn_table()
theta0 = dijkstra_theta(graph)

cfg = TrainConfig(horizon=scenario.total_steps, batch_size=1, chunk_size=1,
                  epochs=300, lr=0.02, sigma_obs=0.25, mode="pc", seed=0,
                  early_stop_patience=10 ** 9)
policy, log = train(cfg, graph, spawn, dt=scenario.dt_s,
                    bounds=scenario.bounds(), theta_default=theta0)
losses = [rec["loss"] for rec in log]
print(f"trained {len(log)} epochs; loss {losses[0]:.4g} -> best {min(losses):.4g}")

# %% closed-loop comparison on the acyclic plant
nc = evaluate(NoControlController(graph, scenario.bounds()), AnmfdSimulator(graph),
              spawn, steps=scenario.total_steps, dt=scenario.dt_s,
              sigma_obs=scenario.obs_noise_std_veh, seed=0)
dpc = evaluate(PolicyController(policy), AnmfdSimulator(graph), spawn,
               steps=scenario.total_steps, dt=scenario.dt_s,
               sigma_obs=scenario.obs_noise_std_veh, seed=0)

improvement = 1.0 - dpc.total_accumulation_veh_s / nc.total_accumulation_veh_s
print(f"no-control total: {nc.total_accumulation_veh_s:.4g} veh*s, "
      f"final {nc.final_accumulation_veh:.0f} veh")
print(f"DPC PC total:     {dpc.total_accumulation_veh_s:.4g} veh*s, "
      f"final {dpc.final_accumulation_veh:.0f} veh")
print(f"improvement:      {improvement:.1%}")

# %% trajectory comparison
band = optimal_band(graph)[0]
fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
for ax, res, title in ((axes[0], nc, "no-control"), (axes[1], dpc, "DPC PC")):
    for r in range(graph.regions):
        ax.plot(res.region_traj_veh[:, r], lw=2.0 if r == 3 else 0.8)
    ax.axhspan(band.x_lo, band.x_hi, color="green", alpha=0.15)
    ax.axhline(band.x_jam, color="red", ls="--", lw=1)
    ax.set_title(title)
    ax.set_xlabel("timestep")
axes[0].set_ylabel("accumulation (veh)")
fig.tight_layout()
fig.savefig("demo04_trained_policy.png", dpi=120)
print("wrote demo04_trained_policy.png")
