"""Region graphs and MFD polynomial utilities.

A region graph is an undirected adjacency structure plus per-region cubic
MFD coefficients (a, b, c) mapping accumulation (veh) to outflow (veh/s).
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

# MFD coefficients of the seven-region benchmark (flow in veh/s from veh)
BENCHMARK_MFD = (4.133e-11, -8.282e-7, 0.0042)


@dataclass(frozen=True)
class ControlBounds:
    """Perimeter-control limits, dimensionless transfer ratios."""
    u_min: float = 0.1
    u_max: float = 0.9

    def __post_init__(self):
        if not (0.0 <= self.u_min < self.u_max <= 1.0):
            raise ValueError(f"invalid control bounds [{self.u_min}, {self.u_max}]")


@dataclass
class RegionGraph:
    """Adjacency matrix plus per-region MFD coefficients.

    adjacency: (R, R) symmetric 0/1 array with zero diagonal.
    mfd_coeffs: (R, 3) array of (a, b, c) per region.
    """

    adjacency: np.ndarray
    mfd_coeffs: np.ndarray
    _neighbors: list = field(init=False, repr=False)

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got {A.shape}")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        coeffs = np.asarray(self.mfd_coeffs, dtype=np.float64)
        if coeffs.shape != (A.shape[0], 3):
            raise ValueError(f"mfd_coeffs must be ({A.shape[0]}, 3), got {coeffs.shape}")
        self.adjacency = A
        self.mfd_coeffs = coeffs
        self._neighbors = [np.flatnonzero(A[i]) for i in range(A.shape[0])]
        self.jam_onset = np.array([_local_min_cubic(a, b, c) for a, b, c in coeffs])
        self.jam_flow = np.array([
            max(a * x ** 3 + b * x ** 2 + c * x, 0.0) if np.isfinite(x) else 0.0
            for (a, b, c), x in zip(coeffs, self.jam_onset)])
        crit = np.array([_argmax_cubic(a, b, c) for a, b, c in coeffs])
        self.jam_width = np.where(np.isfinite(self.jam_onset),
                                  np.maximum(self.jam_onset - crit, 1.0), np.inf)
        if not self.is_connected():
            warnings.warn("region graph is not connected", stacklevel=2)
        self._validate_mfd()

    @property
    def regions(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return self._neighbors[i]

    def is_connected(self) -> bool:
        R = self.adjacency.shape[0]
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for h in self._neighbors[i]:
                if h not in seen:
                    seen.add(h)
                    frontier.append(int(h))
        return len(seen) == R

    def _validate_mfd(self, x_scan: float = 2.0e4):
        xs = np.linspace(0.0, x_scan, 2001)
        for i in range(self.regions):
            if self.outflow(xs, region=i).max() <= 0:
                raise ValueError(f"region {i}: MFD has no positive flow on [0, {x_scan}]")

    def outflow(self, x, region=None) -> np.ndarray:
        """MFD flow a*x^3 + b*x^2 + c*x, floored at 0 (veh/s).

        A positive-leading cubic rises again past its local minimum, which
        would give gridlocked regions unboundedly growing outflow.  Beyond
        that point (the jam onset) the flow instead declines linearly to
        zero over one falling-branch width, extending the jam branch down
        to full gridlock.
        """
        x = np.asarray(x, dtype=np.float64)
        if region is None:
            a, b, c = self.mfd_coeffs[:, 0], self.mfd_coeffs[:, 1], self.mfd_coeffs[:, 2]
            onset, flow0, width = self.jam_onset, self.jam_flow, self.jam_width
        else:
            a, b, c = self.mfd_coeffs[region]
            onset = self.jam_onset[region]
            flow0, width = self.jam_flow[region], self.jam_width[region]
        x_base = np.minimum(x, onset)
        base = np.maximum(a * x_base ** 3 + b * x_base ** 2 + c * x_base, 0.0)
        over = np.maximum(x - onset, 0.0)   # 0 when onset is inf
        return np.maximum(base - flow0 * over / width, 0.0)

    def critical_accumulation(self) -> np.ndarray:
        """Per-region accumulation maximizing the MFD (veh), from g'(x) = 0."""
        out = np.empty(self.regions)
        for i, (a, b, c) in enumerate(self.mfd_coeffs):
            out[i] = _argmax_cubic(a, b, c)
        return out

    def max_outflow(self) -> np.ndarray:
        xc = self.critical_accumulation()
        return np.array([self.outflow(xc[i], region=i) for i in range(self.regions)])

    def edge_list(self) -> list:
        R = self.regions
        return [[i, j] for i in range(R) for j in range(i + 1, R)
                if self.adjacency[i, j] == 1]

    def topology_hash(self) -> str:
        payload = json.dumps({"regions": self.regions, "edges": self.edge_list()},
                             sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def from_edges(cls, regions: int, edges, mfd_coeffs) -> "RegionGraph":
        A = np.zeros((regions, regions))
        for i, j in edges:
            A[i, j] = A[j, i] = 1.0
        coeffs = np.asarray(mfd_coeffs, dtype=np.float64)
        if coeffs.ndim == 1:
            coeffs = np.tile(coeffs, (regions, 1))
        return cls(A, coeffs)

    @classmethod
    def complete(cls, regions: int, mfd_coeffs) -> "RegionGraph":
        edges = [(i, j) for i in range(regions) for j in range(i + 1, regions)]
        return cls.from_edges(regions, edges, mfd_coeffs)


def random_mfd(rng, base=BENCHMARK_MFD, spread: float = 0.5) -> np.ndarray:
    """Random MFD coefficients scaled around the benchmark cubic.

    Redraws until the cubic keeps an interior peak (4b^2 - 12ac > 0).
    """
    for _ in range(100):
        a, b, c = np.array(base) * rng.uniform(1.0 - spread, 1.0 + spread, 3)
        if 4.0 * b * b - 12.0 * a * c > 0:
            return np.array([a, b, c])
    raise RuntimeError("could not sample an MFD with an interior peak")


def _local_min_cubic(a: float, b: float, c: float) -> float:
    """Accumulation of the cubic's interior local minimum, or inf if none.

    For a > 0 the flow curve rises again past this point; outflow is capped
    there (see RegionGraph.outflow).
    """
    if a > 1e-300:
        disc = 4.0 * b * b - 12.0 * a * c
        if disc >= 0:
            root = (-2.0 * b + np.sqrt(disc)) / (6.0 * a)
            if root > 0:
                return float(root)
    return np.inf


def _argmax_cubic(a: float, b: float, c: float, x_hi: float = 2.0e4) -> float:
    """Location of the physical peak of a*x^3 + b*x^2 + c*x.

    Returns the first interior local maximum (g' = 0, g'' < 0); cubics with
    a > 0 rise again past their local minimum, which is outside the model's
    physical range and must not win the argmax.  Falls back to a grid argmax
    on [0, x_hi] when no interior peak exists.
    """
    stationary = []
    if abs(a) > 1e-300:
        disc = 4.0 * b * b - 12.0 * a * c
        if disc >= 0:
            r = np.sqrt(disc)
            stationary = [(-2.0 * b - r) / (6.0 * a), (-2.0 * b + r) / (6.0 * a)]
    elif abs(b) > 1e-300:
        stationary = [-c / (2.0 * b)]
    maxima = [x for x in stationary
              if 0.0 < x <= x_hi and 6.0 * a * x + 2.0 * b < 0]
    if maxima:
        return float(min(maxima))
    xs = np.linspace(0.0, x_hi, 4001)
    vals = a * xs ** 3 + b * xs ** 2 + c * xs
    return float(xs[int(np.argmax(vals))])
