"""Radial kernel weight functions and bandwidth selection rules.

All families are normalized to integrate to 1 over R^d so that the moment
checks (unit mass, zero first moment) are meaningful; only relative weights
matter for the regressions themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["KernelSpec", "BandwidthRule", "evaluate_kernel", "nearest_neighbor_bandwidth"]

FAMILIES = ("gaussian", "epanechnikov", "uniform")


def unit_ball_volume(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel kappa(x) = f(|x|), nonincreasing in |x|, unit mass on R^d."""

    family: str = "epanechnikov"
    dimension: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dimension < 1:
            raise ValueError("kernel dimension must be >= 1")

    @property
    def bounded_support(self):
        return self.family != "gaussian"

    def weights(self, u):
        """Kernel values for points ``u`` of shape (S, d); returns (S,)."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        d = self.dimension
        if u.shape[1] != d:
            raise ValueError(f"expected points of dimension {d}, got {u.shape[1]}")
        r2 = np.einsum("ij,ij->i", u, u)
        if self.family == "gaussian":
            return np.exp(-0.5 * r2) / (2 * math.pi) ** (d / 2)
        vol = unit_ball_volume(d)
        if self.family == "uniform":
            return np.where(r2 <= 1.0, 1.0 / vol, 0.0)
        # epanechnikov: c * (1 - |x|^2) on the unit ball
        c = (d + 2) / (2 * vol)
        return np.where(r2 <= 1.0, c * (1.0 - r2), 0.0)


def evaluate_kernel(spec, u):
    """Kernel value at a single point of length ``spec.dimension``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != spec.dimension:
        raise ValueError(f"expected a point of dimension {spec.dimension}, got {u.size}")
    return float(spec.weights(u[None, :])[0])


def nearest_neighbor_bandwidth(norms, kn):
    """Bandwidth set to the kn-th smallest norm (ascending order statistic).

    Ties resolve by position after a stable sort, so at least kn draws
    satisfy |y_s| <= h.
    """
    norms = np.asarray(norms, dtype=float).reshape(-1)
    if norms.size == 0:
        raise ValueError("empty norm sequence")
    if not 1 <= kn <= norms.size:
        raise ValueError(f"nearest-neighbor count {kn} out of range 1..{norms.size}")
    return float(np.sort(norms, kind="stable")[kn - 1])


@dataclass(frozen=True)
class BandwidthRule:
    """How to resolve the bandwidth for one local fit.

    fixed: use ``h`` as given.  nearest_neighbor: distance of the kn-th
    closest regressor to the origin.  tuned: placeholder carrying a candidate
    grid; the experiment harness replaces it with the winning rule.
    """

    mode: str
    h: float | None = None
    kn: int | None = None
    grid: tuple = ()
    objective: str = "rmse"

    @classmethod
    def fixed(cls, h):
        if not h > 0:
            raise ValueError("fixed bandwidth must be > 0")
        return cls("fixed", h=float(h))

    @classmethod
    def nearest_neighbor(cls, kn):
        kn = int(kn)
        if kn < 1:
            raise ValueError("nearest-neighbor count must be >= 1")
        return cls("nearest_neighbor", kn=kn)

    @classmethod
    def tuned(cls, grid, objective="rmse"):
        grid = tuple(grid)
        if not grid:
            raise ValueError("tuning grid must be nonempty")
        return cls("tuned", grid=grid, objective=objective)

    @classmethod
    def parse(cls, text):
        """Parse rule labels like ``h:0.25`` or ``nn:500`` (or a bare float)."""
        text = str(text).strip()
        if text.startswith("nn:"):
            return cls.nearest_neighbor(int(text[3:]))
        if text.startswith("h:"):
            return cls.fixed(float(text[2:]))
        return cls.fixed(float(text))

    def label(self):
        if self.mode == "fixed":
            return f"h:{self.h:g}"
        if self.mode == "nearest_neighbor":
            return f"nn:{self.kn}"
        return "tuned"

    def resolve(self, norms):
        """Concrete bandwidth for a sample with the given regressor norms."""
        if self.mode == "fixed":
            return self.h
        if self.mode == "nearest_neighbor":
            kn = min(self.kn, len(norms))
            return nearest_neighbor_bandwidth(norms, kn)
        raise ValueError("a tuned rule must be resolved by the harness before use")
