"""Block Hadamard basis change and permutation folding into neighbouring modules."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DimensionError, Permutation, apply_perm_cols, apply_perm_rows, as_matrix
from .reorder import LayerSpec

NORM_KINDS = ("rmsnorm", "layernorm")
DEFAULT_EPS = 1e-6


def default_block(d: int) -> int:
    """Largest power of two dividing ``d``."""
    if d < 1:
        raise ValueError("d must be positive")
    return d & -d


@dataclass(frozen=True)
class HadamardConfig:
    """Orthonormal Walsh-Hadamard transform applied per contiguous block."""

    block: int

    def __post_init__(self):
        if self.block < 1 or self.block & (self.block - 1):
            raise ValueError(f"Hadamard block must be a power of two, got {self.block}")

    @classmethod
    def for_dim(cls, d: int) -> "HadamardConfig":
        return cls(default_block(d))


def fwht(x, cfg: HadamardConfig | None = None) -> np.ndarray:
    """Fast orthonormal Walsh-Hadamard transform along the last axis, blockwise.

    Uses the natural (Sylvester) ordering; the block matrix is symmetric and
    its own inverse.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    block = (cfg or HadamardConfig.for_dim(d)).block
    if d % block:
        raise DimensionError(f"Hadamard block {block} does not divide {d}")
    lead = x.shape[:-1]
    y = x.reshape(*lead, d // block, block)
    h = 1
    while h < block:
        y = y.reshape(*lead, d // block, block // (2 * h), 2, h)
        a = y[..., 0, :]
        b = y[..., 1, :]
        y = np.stack((a + b, a - b), axis=-2)
        h *= 2
    return y.reshape(x.shape) / np.sqrt(block)


def hadamard_rows(x, cfg: HadamardConfig) -> np.ndarray:
    """``XH`` for a (tokens, channels) matrix."""
    return fwht(as_matrix(x, "X"), cfg)


def hadamard_cols(w, cfg: HadamardConfig) -> np.ndarray:
    """``H^T W`` for a (d_in, d_out) weight; ``H`` is symmetric so this is ``HW``."""
    return np.ascontiguousarray(fwht(as_matrix(w, "W").T, cfg).T)


def hadamard_then_reorder(x, w, perm: Permutation, cfg: HadamardConfig):
    """Return ``(XHP, P^T H^T W)``; their product equals ``XW`` up to rounding."""
    x = as_matrix(x, "X")
    w = as_matrix(w, "W")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"cannot pair X {x.shape} with W {w.shape}")
    return apply_perm_cols(hadamard_rows(x, cfg), perm), apply_perm_rows(hadamard_cols(w, cfg), perm)


def hadamard_transform_layer(layer: LayerSpec, cfg: HadamardConfig | None = None) -> LayerSpec:
    """Move a layer into the Hadamard basis so reordering sees what gets quantized."""
    cfg = cfg or HadamardConfig.for_dim(layer.d_in)
    return LayerSpec(
        hadamard_cols(layer.weight, cfg), hadamard_rows(layer.calib_acts, cfg), layer.predecessor
    )


@dataclass(frozen=True)
class NormSpec:
    """RMSNorm or LayerNorm parameters.

    ``gamma`` is the channel scale (``None`` means ones). ``mod_scale`` and
    ``mod_shift`` are the optional adaptive modulation ``(1 + s) * LN(x) + b``.
    """

    kind: str
    gamma: np.ndarray | None = None
    mod_scale: np.ndarray | None = None
    mod_shift: np.ndarray | None = None
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if not self.eps >= 0:
            raise ValueError("eps must be nonnegative")
        if (self.mod_scale is None) != (self.mod_shift is None):
            raise ValueError("modulation needs both scale and shift")
        sizes = {np.size(p) for p in self._params() if p is not None}
        if len(sizes) > 1:
            raise DimensionError("norm parameters differ in length")

    def _params(self):
        return (self.gamma, self.mod_scale, self.mod_shift)

    @property
    def dim(self) -> int | None:
        for p in self._params():
            if p is not None:
                return int(np.size(p))
        return None

    def _check(self, x: np.ndarray):
        if self.dim is not None and x.shape[-1] != self.dim:
            raise DimensionError(f"input has {x.shape[-1]} channels, norm expects {self.dim}")


def rmsnorm_apply(x, spec: NormSpec) -> np.ndarray:
    if spec.kind != "rmsnorm":
        raise ValueError("norm kind must be rmsnorm")
    x = np.asarray(x, dtype=np.float64)
    spec._check(x)
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + spec.eps)
    y = np.divide(x, rms, out=np.zeros_like(x), where=rms > 0)
    if spec.gamma is not None:
        y = y * spec.gamma
    return y


def layernorm_apply(x, spec: NormSpec) -> np.ndarray:
    if spec.kind != "layernorm":
        raise ValueError("norm kind must be layernorm")
    x = np.asarray(x, dtype=np.float64)
    spec._check(x)
    centered = x - np.mean(x, axis=-1, keepdims=True)
    std = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + spec.eps)
    y = np.divide(centered, std, out=np.zeros_like(x), where=std > 0)
    if spec.gamma is not None:
        y = y * spec.gamma
    if spec.mod_scale is not None:
        y = (1.0 + spec.mod_scale) * y + spec.mod_shift
    return y


def norm_apply(x, spec: NormSpec) -> np.ndarray:
    return rmsnorm_apply(x, spec) if spec.kind == "rmsnorm" else layernorm_apply(x, spec)


def fold_perm_into_norm(spec: NormSpec, perm: Permutation) -> NormSpec:
    """Permute the norm's channel parameters so ``norm'(Px) == P norm(x)``."""
    d = spec.dim
    if d is not None and d != len(perm):
        raise DimensionError(f"norm has {d} channels, permutation has {len(perm)}")

    def take(p):
        return None if p is None else np.asarray(p, dtype=np.float64)[perm.forward]

    return replace(
        spec, gamma=take(spec.gamma), mod_scale=take(spec.mod_scale), mod_shift=take(spec.mod_shift)
    )


def fold_perm_into_prev_linear(w_prev, perm: Permutation) -> np.ndarray:
    """Reorder the output columns of the preceding linear layer."""
    w_prev = as_matrix(w_prev, "W_prev")
    if w_prev.shape[1] != len(perm):
        raise DimensionError(f"W_prev has {w_prev.shape[1]} outputs, permutation has {len(perm)}")
    return apply_perm_cols(w_prev, perm)


def fold_perm_into_weight(w, perm: Permutation) -> np.ndarray:
    """Offline ``P^T W``."""
    return apply_perm_rows(w, perm)
