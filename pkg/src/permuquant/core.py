"""Dense-matrix and permutation primitives shared by every other module.

Matrices are plain 2-D ``float64`` numpy arrays in C (row-major) order.
``as_matrix`` is the single gate that enforces that contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and widen ``a`` to a finite, C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Permutation:
    """A bijection on ``{0, ..., d-1}``.

    ``forward[j]`` is the source channel placed at position ``j``; ``inverse``
    undoes it, so ``inverse[forward[i]] == i``.
    """

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward) -> "Permutation":
        fwd = np.asarray(forward)
        if fwd.ndim != 1:
            raise ValueError("permutation must be 1-D")
        if fwd.size and not np.issubdtype(fwd.dtype, np.integer):
            if not np.all(fwd == np.round(fwd)):
                raise ValueError("permutation entries must be integers")
        fwd = fwd.astype(np.int64)
        d = fwd.size
        if d and (fwd.min() < 0 or fwd.max() >= d):
            raise ValueError(f"permutation entries must lie in [0, {d})")
        inv = np.full(d, -1, dtype=np.int64)
        inv[fwd] = np.arange(d, dtype=np.int64)
        if np.any(inv < 0):
            raise ValueError("permutation entries must be distinct")
        return cls(_frozen(fwd), _frozen(inv))

    @classmethod
    def identity(cls, d: int) -> "Permutation":
        return cls.from_forward(np.arange(d))

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "Permutation":
        return cls.from_forward(rng.permutation(d))

    def __len__(self) -> int:
        return int(self.forward.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)

    def __hash__(self) -> int:
        return hash(self.forward.tobytes())

    def __repr__(self) -> str:
        return f"Permutation({self.forward.tolist()})"

    def inverted(self) -> "Permutation":
        return Permutation(self.inverse, self.forward)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.forward, np.arange(len(self))))

    def tolist(self) -> list[int]:
        return self.forward.tolist()


@dataclass(frozen=True)
class Grouping:
    """``d`` channels split into ``d // g`` contiguous groups of size ``g``."""

    d: int
    g: int

    def __post_init__(self):
        if self.g < 1:
            raise ValueError(f"group size must be >= 1, got {self.g}")
        if self.d < 1 or self.d % self.g:
            raise ValueError(f"group size {self.g} does not divide {self.d} channels")

    @property
    def num_groups(self) -> int:
        return self.d // self.g

    def groups(self) -> list[range]:
        return [range(k * self.g, (k + 1) * self.g) for k in range(self.num_groups)]


def apply_perm_cols(x, perm: Permutation) -> np.ndarray:
    """Compute ``XP``: column ``j`` of the result is column ``forward[j]`` of ``X``."""
    x = as_matrix(x, "X")
    if x.shape[1] != len(perm):
        raise DimensionError(f"X has {x.shape[1]} columns but permutation has length {len(perm)}")
    return x[:, perm.forward]


def apply_perm_rows(w, perm: Permutation) -> np.ndarray:
    """Compute ``P^T W``: row ``j`` of the result is row ``forward[j]`` of ``W``."""
    w = as_matrix(w, "W")
    if w.shape[0] != len(perm):
        raise DimensionError(f"W has {w.shape[0]} rows but permutation has length {len(perm)}")
    return w[perm.forward, :]


def matmul(x, w) -> np.ndarray:
    """Matrix product with a fixed left-to-right accumulation over the inner index.

    Every output entry is ``((x[r,0]*w[0,c] + x[r,1]*w[1,c]) + ...)`` in that
    order, independent of BLAS threading, so results are bit-reproducible.
    """
    x = as_matrix(x, "X")
    w = as_matrix(w, "W")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"cannot multiply {x.shape} by {w.shape}")
    out = np.zeros((x.shape[0], w.shape[1]))
    for k in range(x.shape[1]):
        out += np.multiply.outer(x[:, k], w[k])
    return out
