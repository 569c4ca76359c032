"""Parameter draw generation: priors, quasi-random sequences, importance weights.

Every random variate is derived from a hash of (seed, stream label, draw
index, coordinate) instead of a shared sequential stream.  Draw s of a batch
is therefore identical no matter how many draws are requested, in which order
they are produced, or on which worker, which is what makes parallel
replication runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "DrawBatch",
    "Marginal",
    "PriorSpec",
    "adaptive_proposal",
    "counter_normals",
    "counter_uniforms",
    "derive_seeds",
    "halton_point",
    "halton_points",
    "importance_weights",
    "sample_prior",
]

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_LANE_SALT = _U64(0x94D049BB133111EB)
_INV53 = 1.0 / (1 << 53)

# First primes, used as Halton bases for quasi-random prior sampling.
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def _mix(x):
    """SplitMix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    with np.errstate(over="ignore"):
        x = np.asarray(x, dtype=_U64)
        x = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> _U64(27))) * _U64(0x94D049BB133111EB)
        return x ^ (x >> _U64(31))


def _stream_key(seed, stream):
    digest = hashlib.blake2s(stream.encode("utf-8"), digest_size=8).digest()
    tag = int.from_bytes(digest, "little")
    base = ((seed & _MASK64) ^ tag) ^ 0x9E3779B97F4A7C15
    return _mix(np.asarray(base & _MASK64, dtype=_U64))


def _draw_keys(seed, stream, index):
    """Per-draw 64-bit keys, shape like ``index``."""
    key = _stream_key(seed, stream)
    idx = np.asarray(index, dtype=_U64)
    with np.errstate(over="ignore"):
        return _mix(key + (idx + _U64(1)) * _GOLDEN)


def counter_uniforms(seed, stream, index, width):
    """Uniform(0,1) variates keyed by (seed, stream, draw index, coordinate).

    Returns an array of shape ``(len(index), width)``.  Entry (s, j) depends
    only on its own key, so prefixes are stable in both axes.
    """
    inner = _draw_keys(seed, stream, index).reshape(-1, 1)
    with np.errstate(over="ignore"):
        lane = _mix((np.arange(width, dtype=_U64) + _U64(1)) * _LANE_SALT)
    bits = _mix(inner ^ lane)
    return ((bits >> _U64(11)).astype(np.float64) + 0.5) * _INV53


def counter_normals(seed, stream, index, width):
    """Standard normal variates with the same keying as counter_uniforms."""
    return ndtri(counter_uniforms(seed, stream, index, width))


def derive_seeds(seed, stream, index):
    """Integer sub-seeds for per-draw simulator calls."""
    return _draw_keys(seed, stream, index).astype(np.uint64)


def _radical_inverse(index, base):
    f = 1.0
    r = 0.0
    i = index
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def halton_point(index, bases):
    """Halton point for a 1-based index: coordinate j is the radical inverse
    of ``index`` in ``bases[j]``.

    Bases must be pairwise coprime integers >= 2.
    """
    if index < 1:
        raise ValueError("Halton index must be >= 1")
    bases = tuple(int(b) for b in bases)
    for b in bases:
        if b < 2:
            raise ValueError(f"invalid Halton base {b}")
    for i in range(len(bases)):
        for j in range(i + 1, len(bases)):
            if math.gcd(bases[i], bases[j]) != 1:
                raise ValueError(f"Halton bases {bases[i]} and {bases[j]} share a factor")
    return np.array([_radical_inverse(index, b) for b in bases])


def halton_points(count, dim, offset=0):
    """First ``count`` Halton points (after ``offset``) in dimension ``dim``,
    using the first ``dim`` primes as bases."""
    if dim > len(_PRIMES):
        raise ValueError(f"quasi-random sampling supported up to dimension {len(_PRIMES)}")
    bases = _PRIMES[:dim]
    out = np.empty((count, dim))
    for s in range(count):
        idx = offset + s + 1
        for j, b in enumerate(bases):
            out[s, j] = _radical_inverse(idx, b)
    return out


@dataclass(frozen=True)
class Marginal:
    """Scalar prior marginal: uniform(low, high) or normal(mean, sd)."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ValueError(f"unknown marginal kind {self.kind!r}")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform marginal needs low < high")
        if self.kind == "normal" and not self.b > 0:
            raise ValueError("normal marginal needs sd > 0")

    def ppf(self, u):
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        return self.a + self.b * ndtri(u)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            inside = (x >= self.a) & (x <= self.b)
            return np.where(inside, 1.0 / (self.b - self.a), 0.0)
        z = (x - self.a) / self.b
        return np.exp(-0.5 * z * z) / (self.b * math.sqrt(2 * math.pi))


class PriorSpec:
    """Prior (or proposal) distribution over the parameter vector.

    Three kinds are supported: ``uniform_box``, ``normal`` and ``product`` of
    scalar marginals.  All expose a density evaluator; product-form priors
    (boxes, diagonal normals, explicit products) additionally support
    quasi-random sampling through per-coordinate inverse CDFs.
    """

    def __init__(self, kind, *, lower=None, upper=None, mean=None, cov=None, marginals=None):
        self.kind = kind
        if kind == "uniform_box":
            self.lower = np.asarray(lower, dtype=float).reshape(-1)
            self.upper = np.asarray(upper, dtype=float).reshape(-1)
            if self.lower.shape != self.upper.shape:
                raise ValueError("box bounds must have equal length")
            if not np.all(self.lower < self.upper):
                raise ValueError("box bounds require lower < upper coordinatewise")
            self.dimension = self.lower.size
        elif kind == "normal":
            self.mean = np.asarray(mean, dtype=float).reshape(-1)
            cov = np.asarray(cov, dtype=float)
            if cov.ndim == 1:
                cov = np.diag(cov)
            if cov.shape != (self.mean.size, self.mean.size):
                raise ValueError("covariance shape does not match mean")
            if not np.allclose(cov, cov.T):
                raise ValueError("covariance must be symmetric")
            self.cov = cov
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ValueError("covariance must be positive definite") from exc
            self.dimension = self.mean.size
        elif kind == "product":
            self.marginals = tuple(marginals)
            if not self.marginals:
                raise ValueError("product prior needs at least one marginal")
            self.dimension = len(self.marginals)
        else:
            raise ValueError(f"unknown prior kind {kind!r}")

    @classmethod
    def uniform_box(cls, lower, upper):
        return cls("uniform_box", lower=lower, upper=upper)

    @classmethod
    def normal(cls, mean, cov):
        return cls("normal", mean=mean, cov=cov)

    @classmethod
    def product(cls, marginals):
        return cls("product", marginals=marginals)

    @property
    def is_product_form(self):
        if self.kind in ("uniform_box", "product"):
            return True
        return bool(np.allclose(self.cov, np.diag(np.diag(self.cov))))

    def _as_marginals(self):
        if self.kind == "uniform_box":
            return [Marginal("uniform", lo, hi) for lo, hi in zip(self.lower, self.upper)]
        if self.kind == "product":
            return list(self.marginals)
        if self.is_product_form:
            sds = np.sqrt(np.diag(self.cov))
            return [Marginal("normal", m, s) for m, s in zip(self.mean, sds)]
        raise ValueError("prior is not product-form")

    def density(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != self.dimension:
            raise ValueError("parameter dimension mismatch")
        if self.kind == "uniform_box":
            inside = np.all((theta >= self.lower) & (theta <= self.upper), axis=1)
            vol = float(np.prod(self.upper - self.lower))
            out = np.where(inside, 1.0 / vol, 0.0)
        elif self.kind == "normal":
            diff = theta - self.mean
            z = np.linalg.solve(self._chol, diff.T)
            quad = np.sum(z * z, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
            out = np.exp(-0.5 * (quad + logdet + self.dimension * math.log(2 * math.pi)))
        else:
            out = np.ones(theta.shape[0])
            for j, marg in enumerate(self.marginals):
                out = out * marg.pdf(theta[:, j])
        return out if out.shape[0] > 1 else float(out[0])

    def sample(self, count, seed, method="pseudo", offset=0):
        """Raw draws as an (count, k) array; see sample_prior for batches."""
        if method == "halton":
            if not self.is_product_form:
                raise ValueError("quasi-random sampling requires a product-form prior")
            u = halton_points(count, self.dimension, offset=offset)
            cols = [m.ppf(u[:, j]) for j, m in enumerate(self._as_marginals())]
            return np.column_stack(cols)
        if method != "pseudo":
            raise ValueError(f"unknown sampling method {method!r}")
        index = np.arange(offset, offset + count)
        u = counter_uniforms(seed, "prior", index, self.dimension)
        if self.kind == "uniform_box":
            return self.lower + (self.upper - self.lower) * u
        if self.kind == "normal":
            return self.mean + ndtri(u) @ self._chol.T
        cols = [m.ppf(u[:, j]) for j, m in enumerate(self.marginals)]
        return np.column_stack(cols)


@dataclass
class DrawBatch:
    """A batch of parameter draws with importance weights and seed lineage."""

    draws: np.ndarray
    weights: np.ndarray
    seed: int
    counters: np.ndarray = field(default=None)
    method: str = "pseudo"

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.counters is None:
            self.counters = np.arange(self.draws.shape[0], dtype=np.uint64)
        else:
            self.counters = np.asarray(self.counters, dtype=np.uint64).reshape(-1)
        if not (self.draws.shape[0] == self.weights.size == self.counters.size):
            raise ValueError("draws, weights and counters must have equal length")
        if not np.all(self.weights > 0):
            raise ValueError("importance weights must be strictly positive")

    @property
    def size(self):
        return self.draws.shape[0]

    @property
    def dimension(self):
        return self.draws.shape[1]


def sample_prior(prior, count, seed, method="pseudo"):
    """Draw ``count`` parameters from the prior with unit weights.

    Deterministic given (prior, seed); draw s is unchanged when count grows.
    """
    if count < 1:
        raise ValueError("need at least one draw")
    draws = prior.sample(count, seed, method=method)
    return DrawBatch(draws, np.ones(count), seed=seed, method=method)


def _eval_density(density, thetas):
    if hasattr(density, "density"):
        out = density.density(thetas)
    else:
        out = np.array([float(density(t)) for t in thetas])
    return np.asarray(out, dtype=float).reshape(-1)


def importance_weights(batch, proposal_density, target_density):
    """Reweight a batch drawn from ``proposal_density`` toward ``target_density``.

    New weights multiply any existing ones: w_s *= target(theta_s) / proposal(theta_s).
    """
    prop = _eval_density(proposal_density, batch.draws)
    if np.any(prop <= 0):
        bad = int(np.argmax(prop <= 0))
        raise ValueError(f"proposal density is not positive at draw {bad}")
    targ = _eval_density(target_density, batch.draws)
    if np.any(targ < 0):
        raise ValueError("target density must be nonnegative")
    return DrawBatch(
        batch.draws,
        batch.weights * targ / prop,
        seed=batch.seed,
        counters=batch.counters,
        method=batch.method,
    )


def adaptive_proposal(initial_estimate, scale):
    """Normal proposal centered at an initial estimate with sd ``scale`` per
    coordinate, for second-round localized sampling."""
    center = np.asarray(initial_estimate, dtype=float).reshape(-1)
    scale = np.asarray(scale, dtype=float).reshape(-1)
    if scale.size == 1:
        scale = np.full(center.size, float(scale[0]))
    if scale.size != center.size:
        raise ValueError("scale length must match the estimate")
    if not np.all(scale > 0):
        raise ValueError("proposal scale must be strictly positive")
    return PriorSpec.normal(center, np.diag(scale**2))
