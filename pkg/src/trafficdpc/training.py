"""Offline policy training: N-step rollouts through the differentiable model.

The loss is the summed L1 norm of the states visited by the closed-loop
policy + model rollout (total vehicle time up to the dt factor), with
per-step Gaussian process noise added to the state.  Optimization is Adam
with decoupled weight decay; in PCRG mode the two decoders are trained in an
alternating fashion, freezing one while the other updates.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .model import NmfdModel
from .network import ControlBounds, RegionGraph
from .policy import ControlPolicy


class DivergenceError(RuntimeError):
    """Training loss exceeded 10x the initial loss for 10 consecutive epochs."""


@dataclass
class TrainConfig:
    horizon: int = 240              # rollout length N (loss sums k = 1 .. N-1)
    batch_size: int = 256
    epochs: int = 300
    lr: float = 1e-4
    weight_decay: float = 1e-6
    sigma_obs: float = 0.25         # process-noise std during training (veh)
    mode: str = "pcrg"
    alternate_every: int = 1
    seed: int = 0
    hidden_width: int = 128
    backbone_layers: int = 2
    grad_clip: float = 10.0
    chunk_size: int = 16            # rollouts per graph; batches accumulate in fixed order
    normalize_obs: bool = True      # scale observations by 1/critical accumulation
    u_bias_init: float = 0.0        # perimeter-head offset (positive starts near open)
    u_gain: float = 1.0             # perimeter-head logit gain (see policy.decode_u)
    theta_bias_scale: float = 3.0   # routing-head bias toward the default routing
    lr_final: float | None = None   # cosine-decay target; None keeps lr constant
    warmup_epochs: int = 0          # linear lr ramp at the start
    keep_best: bool = True          # return the lowest-loss weights visited
    init_state: str = "empty"       # "empty" or "uniform" over [0, x_cap]
    x_cap: float = 1000.0
    early_stop_patience: int = 20
    early_stop_rel: float = 1e-4

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.sigma_obs < 0:
            raise ValueError("sigma_obs must be >= 0")
        if self.mode not in ("pc", "pcrg"):
            raise ValueError(f"unknown training mode '{self.mode}'")


class AdamW:
    """Adam with decoupled (multiplicative) weight decay over a named parameter dict.

    Frozen parameters are skipped entirely: no moment update, no step-count
    increment, no decay.
    """

    def __init__(self, params: dict, lr: float = 1e-4, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = {n: 0 for n in params}

    def step(self, grads: dict, skip: set | None = None):
        skip = skip or set()
        for name, p in self.params.items():
            if name in skip or name not in grads:
                continue
            g = grads[name]
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** t)
            v_hat = self.v[name] / (1 - self.beta2 ** t)
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the pre-clip norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


def rollout_loss(policy: ControlPolicy, model: NmfdModel, x0: np.ndarray,
                 spawn: np.ndarray, cfg: TrainConfig, dt: float,
                 rng: np.random.Generator | None = None,
                 theta_default: np.ndarray | None = None) -> Tensor:
    """Scalar loss of a closed-loop rollout batch (graph kept for backward).

    x0 is (batch, R, R); spawn is (T, R, R) with T >= horizon.  The loss sums
    L1 norms of the states after steps 1 .. N-1; per-step noise is added to
    the state and the result is clamped at zero before entering the loss and
    the next policy evaluation.
    """
    steps = cfg.horizon - 1
    if spawn.shape[0] < steps:
        raise ValueError(f"spawn covers {spawn.shape[0]} steps, rollout needs {steps}")
    if cfg.mode == "pc" and theta_default is None:
        raise ValueError("PC rollouts need a default routing tensor")
    theta_const = None if theta_default is None else Tensor(theta_default)
    x = Tensor(np.asarray(x0, dtype=np.float64))
    loss = Tensor(0.0)
    for k in range(steps):
        u, theta = policy.forward(x)
        if theta is None:
            theta = theta_const
        x = model.step(x, u, theta, Tensor(spawn[k]), dt)
        if cfg.sigma_obs > 0:
            noise = rng.normal(0.0, cfg.sigma_obs, x.shape)
            x = ad.clamp_min(x + Tensor(noise), 0.0)
        loss = loss + ad.l1_norm(x)
    return loss


def _frozen_group(cfg: TrainConfig, epoch: int) -> str | None:
    if cfg.mode != "pcrg" or cfg.alternate_every <= 0:
        return None
    block = epoch // cfg.alternate_every
    return "theta" if block % 2 == 0 else "u"


def train(cfg: TrainConfig, graph: RegionGraph, spawn: np.ndarray,
          dt: float = 30.0, bounds: ControlBounds | None = None,
          theta_default: np.ndarray | None = None,
          alternate: bool = True):
    """Train a policy on the scenario; returns (policy, log records).

    The initial-condition distribution is the empty network (the scenario is
    driven by the spawn schedule) unless cfg.init_state = "uniform", which
    draws entries uniformly from [0, x_cap] for generalization studies.
    Setting alternate=False trains both decoders jointly (ablation).
    """
    bounds = bounds if bounds is not None else ControlBounds()
    seq = np.random.SeedSequence(cfg.seed)
    init_seed, noise_seed, ic_seed = seq.spawn(3)
    rng = np.random.default_rng(noise_seed)
    ic_rng = np.random.default_rng(ic_seed)

    obs_scale = 1.0
    if cfg.normalize_obs:
        obs_scale = 1.0 / float(np.mean(graph.critical_accumulation()))

    theta_bias = None
    if cfg.mode == "pcrg" and theta_default is not None and cfg.theta_bias_scale:
        theta_bias = cfg.theta_bias_scale * theta_default

    model = NmfdModel(graph)
    policy = ControlPolicy(graph, mode=cfg.mode, hidden_width=cfg.hidden_width,
                           backbone_layers=cfg.backbone_layers, bounds=bounds,
                           obs_scale=obs_scale, u_bias_init=cfg.u_bias_init,
                           u_gain=cfg.u_gain, theta_bias=theta_bias,
                           seed=int(init_seed.generate_state(1)[0]))
    optimizer = AdamW(policy.params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    R = graph.regions
    log: list = []
    initial_loss = None
    high_streak = 0
    best_loss = np.inf
    best_params = None
    for epoch in range(cfg.epochs):
        tic = time.monotonic()
        if cfg.lr_final is not None and cfg.epochs > 1:
            phase = epoch / (cfg.epochs - 1)
            optimizer.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (
                1.0 + np.cos(np.pi * phase))
        if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
            optimizer.lr = optimizer.lr * (epoch + 1) / cfg.warmup_epochs
        frozen = _frozen_group(cfg, epoch) if alternate else None
        policy.frozen = {frozen} if frozen else set()
        skip = {n for n in policy.params if policy.group_of(n) == frozen} if frozen else set()

        if cfg.init_state == "uniform":
            x0_full = ic_rng.uniform(0.0, cfg.x_cap, (cfg.batch_size, R, R))
        else:
            x0_full = np.zeros((cfg.batch_size, R, R))

        grads: dict = {}
        loss_value = 0.0
        name_of = {id(t): n for n, t in policy.params.items()}
        for start in range(0, cfg.batch_size, cfg.chunk_size):
            x0 = x0_full[start:start + cfg.chunk_size]
            loss = rollout_loss(policy, model, x0, spawn, cfg, dt, rng=rng,
                                theta_default=theta_default)
            loss_value += loss.item()
            for tensor, g in backward(loss).items():
                name = name_of.get(id(tensor))
                if name is None:
                    continue
                grads[name] = grads[name] + g if name in grads else g

        if cfg.keep_best and loss_value < best_loss:
            best_loss = loss_value
            best_params = {n: t.data.copy() for n, t in policy.params.items()}

        grad_norm = clip_gradients(grads, cfg.grad_clip)
        optimizer.step(grads, skip=skip)
        log.append({"epoch": epoch, "loss": loss_value, "grad_norm": grad_norm,
                    "frozen": frozen or "", "wall_time_s": time.monotonic() - tic})

        if initial_loss is None:
            initial_loss = loss_value
        if initial_loss > 0 and loss_value > 10.0 * initial_loss:
            high_streak += 1
            if high_streak >= 10:
                raise DivergenceError(
                    f"loss {loss_value:.3e} above 10x initial {initial_loss:.3e} "
                    f"for 10 consecutive epochs (epoch {epoch})")
        else:
            high_streak = 0

        if len(log) > cfg.early_stop_patience:
            window = [r["loss"] for r in log[-(cfg.early_stop_patience + 1):]]
            ref = max(abs(window[0]), 1e-12)
            if abs(window[0] - window[-1]) / ref < cfg.early_stop_rel:
                break

    if cfg.keep_best and best_params is not None:
        for name, values in best_params.items():
            policy.params[name].data = values
    policy.frozen = set()
    return policy, log


def write_training_log(path, records):
    """One JSON record per line: epoch, loss, grad-norm, wall time."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
