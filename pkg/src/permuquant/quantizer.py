"""Per-group symmetric fake quantization and its error measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, Grouping, as_vector

ROUNDING_MODES = ("half_away_from_zero",)


@dataclass(frozen=True)
class QuantConfig:
    """Bit-width, group size and rounding rule.

    ``qmax`` is the largest code magnitude, ``2**(bits-1) - 1``.
    """

    bits: int = 3
    group_size: int = 32
    rounding: str = "half_away_from_zero"

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ValueError(f"bits must be in [2, 8], got {self.bits}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"unsupported rounding mode {self.rounding!r}")

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1

    def grouping(self, d: int) -> Grouping:
        return Grouping(d, self.group_size)


@dataclass(frozen=True)
class QuantizedVector:
    codes: np.ndarray  # int64, |code| <= qmax
    scales: np.ndarray  # one nonnegative scale per group


def round_half_away(x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    f = np.floor(a)
    # a - floor(a) is exact in binary floating point
    r = f + (a - f >= 0.5)
    return np.copysign(r, x)


def group_scale(values, qmax: int) -> float:
    v = as_vector(values, "values")
    if v.size == 0:
        raise ValueError("group is empty")
    return float(np.max(np.abs(v)) / qmax)


def _quantize_last_axis(x: np.ndarray, cfg: QuantConfig):
    d = x.shape[-1]
    if d % cfg.group_size:
        raise DimensionError(f"group size {cfg.group_size} does not divide {d}")
    q = cfg.qmax
    shaped = x.reshape(*x.shape[:-1], d // cfg.group_size, cfg.group_size)
    scales = np.max(np.abs(shaped), axis=-1, keepdims=True) / q
    ratio = np.divide(shaped, scales, out=np.zeros_like(shaped), where=scales > 0)
    codes = np.clip(round_half_away(ratio), -q, q)
    deq = scales * codes
    return deq.reshape(x.shape), codes.astype(np.int64).reshape(x.shape), scales[..., 0]


def quantize_dequantize(x, cfg: QuantConfig) -> tuple[np.ndarray, QuantizedVector]:
    """Quantize a single vector group by group and dequantize it back.

    All-zero groups get scale 0 and codes 0.
    """
    v = as_vector(x, "x")
    deq, codes, scales = _quantize_last_axis(v, cfg)
    return deq, QuantizedVector(codes, scales)


def fake_quantize(m, cfg: QuantConfig, axis: int = -1) -> np.ndarray:
    """Quantize-then-dequantize an array with groups laid along ``axis``.

    Activations (tokens x channels) use ``axis=-1``: each token is grouped on
    its own. Weights (d_in x d_out) use ``axis=0``: each output column is
    grouped along the input dimension.
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("input contains non-finite values")
    moved = np.moveaxis(m, axis, -1)
    deq, _, _ = _quantize_last_axis(np.ascontiguousarray(moved), cfg)
    return np.ascontiguousarray(np.moveaxis(deq, -1, axis))


def quant_error(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.sum((x - x_hat) ** 2))


def error_upper_bound(x, grouping: Grouping, qmax: int) -> float:
    """Per-sample bound ``g / (4 Q^2) * sum_k max_{i in G_k} x_i^2``."""
    v = as_vector(x, "x")
    if v.size != grouping.d:
        raise DimensionError(f"vector of length {v.size} does not match grouping over {grouping.d}")
    peaks = np.max(v.reshape(grouping.num_groups, grouping.g) ** 2, axis=1)
    return float(grouping.g / (4.0 * qmax**2) * np.sum(peaks))
