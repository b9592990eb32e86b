"""Differentiable predictive control for MFD-based urban traffic networks."""

from .network import BENCHMARK_MFD, ControlBounds, RegionGraph
from .model import ControlInput, NmfdModel, NmfdSimulator, mfd_flow
from .plant import AnmfdSimulator, expand_theta, plant_dynamics, project_state
from .policy import ControlPolicy
from .training import AdamW, DivergenceError, TrainConfig, rollout_loss, train
from .baselines import MpcConfig, MpcController, NoControlController, dijkstra_theta, no_control
from .evaluation import (EvalResult, PolicyController, evaluate, optimal_band,
                         robustness_sweep, scaling_benchmark)
from .scenario import Scenario, benchmark7, random_scenario

__version__ = "0.1.0"

__all__ = [
    "BENCHMARK_MFD", "ControlBounds", "RegionGraph",
    "ControlInput", "NmfdModel", "NmfdSimulator", "mfd_flow",
    "AnmfdSimulator", "expand_theta", "plant_dynamics", "project_state",
    "ControlPolicy",
    "AdamW", "DivergenceError", "TrainConfig", "rollout_loss", "train",
    "MpcConfig", "MpcController", "NoControlController", "dijkstra_theta", "no_control",
    "EvalResult", "PolicyController", "evaluate", "optimal_band",
    "robustness_sweep", "scaling_benchmark",
    "Scenario", "benchmark7", "random_scenario",
    "__version__",
]
