"""Command-line interface: scenario authoring, training, evaluation, sweeps.

Commands
  scenario-gen   write a scenario file (the seven-region benchmark or a
                 random fully-connected network)
  train          train a policy on a scenario; writes weights + training log
  eval           closed-loop evaluation of a controller against the plant
  sweep          robustness (spawn-noise) or scaling (region-count) sweeps
  bench          end-to-end benchmark: train both policy modes, evaluate all
                 controllers, emit a summary table

Exit codes: 0 ok, 1 usage error, 2 validation error, 3 runtime divergence.

File outputs (all carry a schema tag):
  scenario JSON; weights JSON; training log JSONL (wall times included);
  trajectory/summary/timing files per evaluation.  Summary files contain no
  wall-clock values, so reruns with the same seed are byte-identical; wall
  times live in the separate timing files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import MpcConfig, MpcController, NoControlController, dijkstra_theta
from .evaluation import (EvalResult, PolicyController, evaluate,
                         robustness_sweep, scaling_benchmark)
from .model import NmfdSimulator
from .plant import AnmfdSimulator
from .policy import ControlPolicy
from .scenario import Scenario, benchmark7, random_scenario
from .training import DivergenceError, TrainConfig, train, write_training_log

SUMMARY_SCHEMA = "trafficdpc-summary-v1"


class UsageError(Exception):
    exit_code = 1


class ValidationError(Exception):
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trafficdpc", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario-gen", help="generate a scenario file")
    p.add_argument("name", choices=["benchmark7", "random"])
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--regions", type=int, default=4,
                   help="region count for random scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_scenario_gen)

    p = sub.add_parser("train", help="train a control policy")
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--mode", choices=["pc", "pcrg"], default="pcrg")
    p.add_argument("--out", required=True, type=Path, help="weights file")
    p.add_argument("--log", type=Path, help="training log (JSONL)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--horizon", type=int, default=240)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-6)
    p.add_argument("--sigma-obs", type=float, default=0.25)
    p.add_argument("--hidden-width", type=int, default=128)
    p.add_argument("--alternate-every", type=int, default=1)
    p.add_argument("--joint", action="store_true",
                   help="train both decoders jointly (ablation)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation")
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--controller", required=True,
                   help="no-control | mpc-pc | mpc-pcrg | path to weights")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--plant", choices=["anmfd", "nmfd"], default="anmfd",
                   help="nmfd evaluates on the training model (ablation)")
    p.add_argument("--mpc-horizon", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="robustness or scaling sweeps")
    p.add_argument("kind", choices=["robustness", "scaling"])
    p.add_argument("--scenario", type=Path, help="required for robustness")
    p.add_argument("--weights", type=Path, help="trained policy for robustness")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--sigmas", type=float, nargs="*",
                   default=[0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0])
    p.add_argument("--trials", type=int, default=20,
                   help="robustness samples per sigma")
    p.add_argument("--regions", type=int, nargs="*", default=[2, 4, 8, 16, 32, 64])
    p.add_argument("--controllers", nargs="*",
                   default=["dpc-pc", "dpc-pcrg", "mpc-pc", "mpc-pcrg"])
    p.add_argument("--steps", type=int, default=10, help="scaling timesteps")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="benchmark experiment end to end")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--scenario", type=Path,
                   help="defaults to the built-in benchmark7")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--skip-mpc", action="store_true")
    p.add_argument("--mpc-horizon", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def _load_scenario(path: Path) -> Scenario:
    if not path.exists():
        raise ValidationError(f"scenario file not found: {path}")
    try:
        return Scenario.load(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationError(f"invalid scenario file {path}: {exc}") from exc


def _write_json(path: Path, doc: dict):
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def cmd_scenario_gen(args) -> int:
    if args.name == "benchmark7":
        scenario = benchmark7()
    else:
        scenario = random_scenario(args.regions, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    scenario.save(args.out)
    print(f"wrote {scenario.name} scenario to {args.out}")
    return 0


def cmd_train(args) -> int:
    scenario = _load_scenario(args.scenario)
    graph = scenario.graph()
    cfg = TrainConfig(horizon=args.horizon, batch_size=args.batch_size,
                      epochs=args.epochs, lr=args.lr,
                      weight_decay=args.weight_decay, sigma_obs=args.sigma_obs,
                      mode=args.mode, alternate_every=args.alternate_every,
                      seed=args.seed, hidden_width=args.hidden_width)
    policy, log = train(cfg, graph, scenario.spawn_table(), dt=scenario.dt_s,
                        bounds=scenario.bounds(),
                        theta_default=dijkstra_theta(graph),
                        alternate=not args.joint)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    policy.save(args.out)
    if args.log:
        write_training_log(args.log, log)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "command": "train",
        "mode": args.mode,
        "epochs_run": len(log),
        "final_loss": log[-1]["loss"],
        "best_loss": min(r["loss"] for r in log),
        "seed": args.seed,
    }
    _write_json(args.out.with_suffix(".summary.json"), summary)
    print(f"final loss {log[-1]['loss']:.6g} (best {summary['best_loss']:.6g}) "
          f"over {len(log)} epochs -> {args.out}")
    return 0


def _make_plant(scenario: Scenario, kind: str):
    graph = scenario.graph()
    return AnmfdSimulator(graph) if kind == "anmfd" else NmfdSimulator(graph)


def _make_controller(spec: str, scenario: Scenario, mpc_horizon: int, seed: int):
    graph = scenario.graph()
    if spec == "no-control":
        return NoControlController(graph, scenario.bounds())
    if spec in ("mpc-pc", "mpc-pcrg"):
        return MpcController(graph, scenario.spawn_table(), dt=scenario.dt_s,
                             cfg=MpcConfig(horizon=mpc_horizon),
                             mode=spec.split("-")[1], bounds=scenario.bounds())
    path = Path(spec)
    if not path.exists():
        raise ValidationError(f"unknown controller spec or missing weights: {spec}")
    try:
        policy = ControlPolicy.load(path, graph)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return PolicyController(policy)


def _write_eval_outputs(out_dir: Path, label: str, result: EvalResult, dt: float):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{label}.trajectory.csv", "w", newline="") as f:
        writer = csv.writer(f)
        regions = result.region_traj_veh.shape[1]
        writer.writerow(["step", "total_veh"] + [f"region{r}_veh" for r in range(regions)])
        for k in range(result.step_total_veh.size):
            writer.writerow([k, repr(result.step_total_veh[k])]
                            + [repr(v) for v in result.region_traj_veh[k]])
    _write_json(out_dir / f"{label}.summary.json", {
        "schema": SUMMARY_SCHEMA,
        "controller": label,
        "total_accumulation_veh_s": result.total_accumulation_veh_s,
        "final_accumulation_veh": result.final_accumulation_veh,
        "steps": int(result.step_total_veh.size),
        "dt_s": dt,
        "clamp_events": result.clamp_events,
        "renorm_events": result.renorm_events,
    })
    _write_json(out_dir / f"{label}.timing.json", {
        "controller_time_s": result.controller_time_s,
        "controller_step_median_s": float(np.median(result.controller_step_times_s)),
    })


def cmd_eval(args) -> int:
    scenario = _load_scenario(args.scenario)
    controller = _make_controller(args.controller, scenario, args.mpc_horizon,
                                  args.seed)
    plant = _make_plant(scenario, args.plant)
    result = evaluate(controller, plant, scenario.spawn_table(),
                      steps=scenario.total_steps, dt=scenario.dt_s,
                      sigma_obs=scenario.obs_noise_std_veh, seed=args.seed,
                      x0=scenario.initial_state())
    label = Path(args.controller).stem if Path(args.controller).exists() \
        else args.controller
    _write_eval_outputs(args.out_dir, label, result, scenario.dt_s)
    print(f"{label}: total {result.total_accumulation_veh_s:.6g} veh*s, "
          f"final {result.final_accumulation_veh:.6g} veh")
    return 0


def cmd_sweep(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "robustness":
        if not args.scenario or not args.weights:
            raise UsageError("robustness sweep needs --scenario and --weights")
        scenario = _load_scenario(args.scenario)
        graph = scenario.graph()
        try:
            policy = ControlPolicy.load(args.weights, graph)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        rows = robustness_sweep(PolicyController(policy), graph,
                                scenario.spawn_table(), steps=scenario.total_steps,
                                dt=scenario.dt_s, sigmas=args.sigmas,
                                samples=args.trials,
                                sigma_obs=scenario.obs_noise_std_veh,
                                seed=args.seed, bounds=scenario.bounds())
        with open(args.out_dir / "robustness.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sigma", "sample", "improvement_veh_s"])
            for row in rows:
                for i, v in enumerate(row.improvements):
                    writer.writerow([row.sigma, i, repr(float(v))])
        _write_json(args.out_dir / "robustness.summary.json", {
            "schema": SUMMARY_SCHEMA,
            "sigmas": [row.sigma for row in rows],
            "mean_improvement_veh_s": [row.mean for row in rows],
            "ci95_veh_s": [row.ci95 for row in rows],
            "samples": args.trials,
            "seed": args.seed,
        })
        for row in rows:
            print(f"sigma {row.sigma:4.2f}: improvement {row.mean:.6g} "
                  f"+/- {row.ci95:.3g} veh*s")
        return 0

    rows = scaling_benchmark(region_counts=args.regions,
                             controllers=tuple(args.controllers),
                             steps=args.steps, seed=args.seed)
    with open(args.out_dir / "scaling_timing.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["regions", "controller", "median_step_s", "steps_timed"])
        for row in rows:
            writer.writerow([row.regions, row.controller,
                             "DNF" if row.median_step_s is None else repr(row.median_step_s),
                             row.steps_timed])
    _write_json(args.out_dir / "scaling.summary.json", {
        "schema": SUMMARY_SCHEMA,
        "regions": args.regions,
        "controllers": list(args.controllers),
        "status": [{"regions": row.regions, "controller": row.controller,
                    "dnf": row.median_step_s is None} for row in rows],
        "seed": args.seed,
    })
    for row in rows:
        shown = "DNF" if row.median_step_s is None else f"{row.median_step_s * 1e3:.3f} ms"
        print(f"R={row.regions:3d} {row.controller:9s} per-step {shown}")
    return 0


def cmd_bench(args) -> int:
    scenario = _load_scenario(args.scenario) if args.scenario else benchmark7()
    graph = scenario.graph()
    spawn = scenario.spawn_table()
    theta0 = dijkstra_theta(graph)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def train_mode(mode):
        cfg = TrainConfig(horizon=scenario.total_steps, batch_size=args.batch_size,
                          chunk_size=max(1, args.batch_size), epochs=args.epochs,
                          lr=args.lr, sigma_obs=0.25, mode=mode, seed=args.seed,
                          early_stop_patience=10 ** 9)
        policy, log = train(cfg, graph, spawn, dt=scenario.dt_s,
                            bounds=scenario.bounds(), theta_default=theta0)
        policy.save(args.out_dir / f"dpc-{mode}.weights.json")
        write_training_log(args.out_dir / f"dpc-{mode}.train_log.jsonl", log)
        return PolicyController(policy)

    controllers = {"no-control": NoControlController(graph, scenario.bounds())}
    controllers["dpc-pc"] = train_mode("pc")
    controllers["dpc-pcrg"] = train_mode("pcrg")
    if not args.skip_mpc:
        for mode in ("pc", "pcrg"):
            controllers[f"mpc-{mode}"] = MpcController(
                graph, spawn, dt=scenario.dt_s,
                cfg=MpcConfig(horizon=args.mpc_horizon), mode=mode,
                bounds=scenario.bounds())

    results = {}
    for label, controller in controllers.items():
        results[label] = evaluate(controller, AnmfdSimulator(graph), spawn,
                                  steps=scenario.total_steps, dt=scenario.dt_s,
                                  sigma_obs=scenario.obs_noise_std_veh,
                                  seed=args.seed, x0=scenario.initial_state())
        _write_eval_outputs(args.out_dir, label, results[label], scenario.dt_s)

    base = results["no-control"].total_accumulation_veh_s
    header = (f"{'algorithm':12s} {'total veh*s':>14s} {'final veh':>12s} "
              f"{'improvement':>14s} {'eval time s':>12s}")
    lines = [header, "-" * len(header)]
    for label, res in results.items():
        improvement = base - res.total_accumulation_veh_s
        lines.append(f"{label:12s} {res.total_accumulation_veh_s:14.6g} "
                     f"{res.final_accumulation_veh:12.6g} {improvement:14.6g} "
                     f"{res.controller_time_s:12.4g}")
    report = "\n".join(lines) + "\n"
    (args.out_dir / "report.txt").write_text(report)
    _write_json(args.out_dir / "bench.summary.json", {
        "schema": SUMMARY_SCHEMA,
        "seed": args.seed,
        "totals_veh_s": {k: r.total_accumulation_veh_s for k, r in results.items()},
        "finals_veh": {k: r.final_accumulation_veh for k, r in results.items()},
        "improvement_veh_s": {k: base - r.total_accumulation_veh_s
                              for k, r in results.items()},
    })
    print(report, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
