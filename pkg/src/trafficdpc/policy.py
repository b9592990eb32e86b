"""Neural control policies satisfying the input constraints by construction.

Three networks share the work: a feature backbone (MLP with SoftExponential
activations, trainable per-layer alpha initialized to the identity), a
perimeter-control decoder whose sigmoid output is rescaled into
[u_min, u_max], and a routing-guidance decoder whose logits pass through a
masked softmax over admissible next hops.  Every weight assignment therefore
produces feasible controls; no projection or clipping is ever applied.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import ControlBounds, RegionGraph

WEIGHTS_SCHEMA = "trafficdpc-weights-v1"


class ControlPolicy:
    """Backbone + decoders over a fixed region graph and topology.

    mode "pc" builds only the perimeter decoder (routing comes from a fixed
    default, e.g. shortest paths); mode "pcrg" adds the routing decoder.
    """

    def __init__(self, graph: RegionGraph, mode: str = "pcrg",
                 hidden_width: int = 128, backbone_layers: int = 2,
                 bounds: ControlBounds | None = None, obs_scale: float = 1.0,
                 seed: int = 0, u_bias_init: float = 0.0, u_gain: float = 1.0,
                 theta_bias: np.ndarray | None = None):
        if mode not in ("pc", "pcrg"):
            raise ValueError(f"unknown policy mode '{mode}'")
        if graph.regions > 1:
            for i in range(graph.regions):
                if len(graph.neighbors(i)) == 0:
                    raise ValueError(
                        f"region {i} has no neighbors: no routing distribution exists")
        self.graph = graph
        self.mode = mode
        self.hidden_width = int(hidden_width)
        self.backbone_layers = int(backbone_layers)
        self.bounds = bounds if bounds is not None else ControlBounds()
        self.obs_scale = float(obs_scale)
        self.u_bias_init = float(u_bias_init)
        self.u_gain = float(u_gain)
        self._theta_bias = None if theta_bias is None else np.asarray(theta_bias,
                                                                      dtype=np.float64)
        self.frozen: set = set()
        R = graph.regions
        self._theta_mask = np.broadcast_to(graph.adjacency[:, :, None], (R, R, R))
        self.params: dict = {}
        self._init_params(seed)

    # -- construction ----------------------------------------------------
    def _add_linear(self, rng, name: str, fan_in: int, fan_out: int, alpha: bool):
        s = 1.0 / np.sqrt(fan_in)
        self.params[f"{name}.W"] = Tensor(rng.uniform(-s, s, (fan_in, fan_out)),
                                          requires_grad=True)
        self.params[f"{name}.b"] = Tensor(rng.uniform(-s, s, fan_out), requires_grad=True)
        if alpha:
            self.params[f"{name}.alpha"] = Tensor(0.0, requires_grad=True)

    def _init_params(self, seed: int):
        rng = np.random.default_rng(seed)
        R, w = self.graph.regions, self.hidden_width
        fan = R * R
        for layer in range(self.backbone_layers):
            self._add_linear(rng, f"backbone.{layer}", fan, w, alpha=True)
            fan = w
        self._add_linear(rng, "u.0", w, w, alpha=True)
        self._add_linear(rng, "u.out", w, R * R, alpha=False)
        # optional offset on the perimeter head: positive values start the
        # policy near open boundaries (the no-control input)
        self.params["u.out.b"].data += self.u_bias_init
        if self.mode == "pcrg":
            self._add_linear(rng, "theta.0", w, w, alpha=True)
            self._add_linear(rng, "theta.out", w, R * R * R, alpha=False)
            if self._theta_bias is not None:
                # seed the routing head toward a reference tensor (e.g.
                # shortest paths) so training refines a sensible default
                self.params["theta.out.b"].data += self._theta_bias.ravel()

    def reinitialize(self, seed: int):
        """Redraw all weights in place (same shapes, new seed)."""
        self.params.clear()
        self._init_params(seed)

    # -- forward ---------------------------------------------------------
    def _linear(self, name: str, h):
        out = ad.matmul(h, self.params[f"{name}.W"]) + self.params[f"{name}.b"]
        alpha = self.params.get(f"{name}.alpha")
        if alpha is not None:
            # guarded variant: saturates instead of overflowing/raising, so
            # every weight assignment yields finite controls
            out = ad.soft_exponential_guarded(alpha, out)
        return out

    def features(self, x_obs):
        """Feature vector (batch, hidden_width) from observed states (..., R, R)."""
        R = self.graph.regions
        h = ad.reshape(ad.as_tensor(x_obs), (-1, R * R))
        if self.obs_scale != 1.0:
            h = ad.mul(h, self.obs_scale)
        for layer in range(self.backbone_layers):
            h = self._linear(f"backbone.{layer}", h)
        return h

    def decode_u(self, b):
        """Perimeter rates in (u_min, u_max), shape (batch, R, R).

        u_gain < 1 flattens the sigmoid so optimization keeps the head in
        its responsive range longer before saturating at the bounds.
        """
        R = self.graph.regions
        logits = ad.matmul(self._linear("u.0", b), self.params["u.out.W"]) \
            + self.params["u.out.b"]
        if self.u_gain != 1.0:
            logits = ad.mul(logits, self.u_gain)
        span = self.bounds.u_max - self.bounds.u_min
        u = ad.mul(ad.sigmoid(logits), span) + self.bounds.u_min
        return ad.reshape(u, (-1, R, R))

    def decode_theta(self, b):
        """Routing ratios on the admissible-hop simplex, shape (batch, R, R, R).

        The softmax normalizes over adjacent next hops only; entries for
        non-adjacent hops are exactly zero for every weight assignment.
        """
        R = self.graph.regions
        logits = ad.matmul(self._linear("theta.0", b), self.params["theta.out.W"]) \
            + self.params["theta.out.b"]
        logits = ad.reshape(logits, (-1, R, R, R))
        return ad.masked_softmax(logits, self._theta_mask, axis=-2)

    def forward(self, x_obs):
        """(u, theta) tensors for a batch of observations; theta is None in PC mode."""
        b = self.features(x_obs)
        u = self.decode_u(b)
        theta = self.decode_theta(b) if self.mode == "pcrg" else None
        return u, theta

    def infer(self, x_obs: np.ndarray):
        """Single-observation inference returning numpy (u, theta-or-None)."""
        u, theta = self.forward(x_obs[None])
        return u.data[0], None if theta is None else theta.data[0]

    # -- parameter groups ------------------------------------------------
    def parameters(self) -> dict:
        return self.params

    def group_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def trainable(self) -> dict:
        return {n: t for n, t in self.params.items() if self.group_of(n) not in self.frozen}

    # -- serialization ---------------------------------------------------
    def save(self, path):
        doc = {
            "schema": WEIGHTS_SCHEMA,
            "mode": self.mode,
            "hidden_width": self.hidden_width,
            "backbone_layers": self.backbone_layers,
            "bounds": [self.bounds.u_min, self.bounds.u_max],
            "obs_scale": self.obs_scale,
            "u_gain": self.u_gain,
            "regions": self.graph.regions,
            "topology_hash": self.graph.topology_hash(),
            "params": {
                name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
                for name, t in sorted(self.params.items())
            },
        }
        with open(path, "w") as f:
            json.dump(doc, f, sort_keys=True, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path, graph: RegionGraph) -> "ControlPolicy":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("schema") != WEIGHTS_SCHEMA:
            raise ValueError(f"unsupported weights schema: {doc.get('schema')!r}")
        if doc["topology_hash"] != graph.topology_hash():
            raise ValueError("weights were trained for a different topology "
                             f"({doc['topology_hash']} != {graph.topology_hash()})")
        policy = cls(graph, mode=doc["mode"], hidden_width=doc["hidden_width"],
                     backbone_layers=doc["backbone_layers"],
                     bounds=ControlBounds(*doc["bounds"]),
                     obs_scale=doc["obs_scale"], u_gain=doc.get("u_gain", 1.0))
        for name, spec in doc["params"].items():
            if name not in policy.params:
                raise ValueError(f"unexpected parameter '{name}' in weights file")
            policy.params[name] = Tensor(
                np.array(spec["values"]).reshape(spec["shape"]), requires_grad=True)
        return policy
