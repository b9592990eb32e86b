"""
Closed-loop simulation without control
======================================

Runs the no-control baseline (all boundaries open, shortest-path routing)
against the acyclic plant and shows how the central region jams: its
accumulation blows through the MFD peak, outflow collapses, and most of the
demand never clears before the horizon ends.
"""

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from trafficdpc import (AnmfdSimulator, NoControlController, benchmark7,
                        evaluate, optimal_band)

scenario = benchmark7()
graph = scenario.graph()
spawn = scenario.spawn_table()

controller = NoControlController(graph, scenario.bounds())
result = evaluate(controller, AnmfdSimulator(graph), spawn,
                  steps=scenario.total_steps, dt=scenario.dt_s,
                  sigma_obs=scenario.obs_noise_std_veh, seed=0)

print(f"total accumulation: {result.total_accumulation_veh_s:.4g} veh*s")
print(f"final accumulation: {result.final_accumulation_veh:.0f} veh")
print(f"per-region finals:  {np.round(result.region_traj_veh[-1])}")

# %% region trajectories against the MFD bands
band = optimal_band(graph)[0]
fig, ax = plt.subplots(figsize=(7, 4))
for r in range(graph.regions):
    ax.plot(result.region_traj_veh[:, r], label=f"region {r}",
            lw=2.0 if r == 3 else 1.0)
ax.axhspan(band.x_lo, band.x_hi, color="green", alpha=0.15)
ax.axhline(band.x_jam, color="red", ls="--", lw=1)
ax.set_xlabel("timestep")
ax.set_ylabel("accumulation (veh)")
ax.set_title("No-control: the central region (3) jams far past the red line")
ax.legend(ncol=4, fontsize=8)
fig.tight_layout()
fig.savefig("demo02_no_control.png", dpi=120)
print("wrote demo02_no_control.png")
