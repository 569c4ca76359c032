"""Multi-index machinery for local polynomial bases of arbitrary degree."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

__all__ = ["MultiIndex", "MultiIndexSet", "build_index_set", "evaluate_basis", "basis_matrix"]


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector u indexing the monomial y_1^{u_1} ... y_d^{u_d}."""

    exponents: tuple

    @property
    def order(self):
        return sum(self.exponents)


@dataclass(frozen=True)
class MultiIndexSet:
    """All multi-indices of total order <= degree, graded lexicographic.

    The all-zero index sits at position 0, so coefficient 0 of any fit over
    this basis is the intercept.
    """

    dimension: int
    degree: int
    indices: tuple
    main_effects_only: bool = False
    _exponents: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        exps = np.array([ix.exponents for ix in self.indices], dtype=np.int64)
        object.__setattr__(self, "_exponents", exps)

    def __len__(self):
        return len(self.indices)

    @property
    def exponents(self):
        return self._exponents


def build_index_set(d, p, main_effects_only=False):
    """Multi-indices with total order <= p in d variables.

    Ordering is graded lexicographic: ascending total order, and within an
    order block descending lexicographic on the exponent tuple, e.g. for
    d=2, p=2: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if p < 0:
        raise ValueError("degree must be >= 0")
    indices = []
    for total in range(p + 1):
        block = [u for u in product(range(total + 1), repeat=d) if sum(u) == total]
        if main_effects_only:
            block = [u for u in block if sum(1 for e in u if e > 0) <= 1]
        block.sort(reverse=True)
        indices.extend(MultiIndex(u) for u in block)
    expected = math.comb(d + p, p)
    if not main_effects_only and len(indices) != expected:
        raise AssertionError("index enumeration lost terms")  # pragma: no cover
    return MultiIndexSet(d, p, tuple(indices), main_effects_only=main_effects_only)


def basis_matrix(points, index_set):
    """Design matrix of monomials: shape (S, len(index_set))."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != index_set.dimension:
        raise ValueError(
            f"points of dimension {pts.shape[1]} do not match basis dimension {index_set.dimension}"
        )
    exps = index_set.exponents
    # integer exponents, so 0^0 = 1 and negative bases are exact
    return np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)


def evaluate_basis(y, index_set):
    """Monomial vector at a single point; component 0 is always 1."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != index_set.dimension:
        raise ValueError(f"point of dimension {y.size} does not match basis dimension {index_set.dimension}")
    return basis_matrix(y[None, :], index_set)[0]
