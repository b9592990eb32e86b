"""
Receding-horizon MPC by direct shooting
=======================================

The MPC baseline optimizes an 8-step control sequence at every timestep by
gradient descent on the differentiable model, using the same sigmoid/masked
softmax reparameterizations as the neural policy, so every iterate is
feasible.  It needs a spawn forecast and hundreds of model rollouts per
step, which is exactly the cost DPC amortizes offline.

Runs on a shortened scenario to keep the demo around a minute.
"""

import time

import numpy as np

from trafficdpc import (AnmfdSimulator, MpcConfig, MpcController,
                        NoControlController, benchmark7, evaluate)

scenario = benchmark7()
scenario.total_steps = 60          # shortened horizon for the demo
graph = scenario.graph()
spawn = scenario.spawn_table()

nc = evaluate(NoControlController(graph, scenario.bounds()), AnmfdSimulator(graph),
              spawn, steps=scenario.total_steps, dt=scenario.dt_s,
              sigma_obs=scenario.obs_noise_std_veh, seed=0)

mpc = MpcController(graph, spawn, dt=scenario.dt_s,
                    cfg=MpcConfig(horizon=8, max_iters=40), mode="pc",
                    bounds=scenario.bounds())
tic = time.monotonic()
res = evaluate(mpc, AnmfdSimulator(graph), spawn, steps=scenario.total_steps,
               dt=scenario.dt_s, sigma_obs=scenario.obs_noise_std_veh, seed=0)
elapsed = time.monotonic() - tic

print(f"no-control total: {nc.total_accumulation_veh_s:.4g} veh*s")
print(f"MPC PC total:     {res.total_accumulation_veh_s:.4g} veh*s")
print(f"improvement:      {nc.total_accumulation_veh_s - res.total_accumulation_veh_s:.4g} veh*s")
print(f"controller time:  {res.controller_time_s:.1f} s over "
      f"{scenario.total_steps} steps ({elapsed:.1f} s wall)")
print(f"median solve:     {np.median(res.controller_step_times_s) * 1e3:.1f} ms/step")
