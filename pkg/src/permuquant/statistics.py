"""Calibration statistics: channel second moments and group extremal ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, Grouping, Permutation, as_matrix


@dataclass(frozen=True)
class ChannelStats:
    second_moment: np.ndarray
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if np.any(self.second_moment < 0):
            raise ValueError("second moments must be nonnegative")

    def permuted(self, perm: Permutation) -> "ChannelStats":
        return ChannelStats(self.second_moment[perm.forward], self.n_samples)


@dataclass(frozen=True)
class ExtremalDiagnostics:
    """Per-group ratio ``E[max x^2] / (log2(2g) max mu^2)`` and its maximum.

    Groups whose channels all have zero second moment get ``peak_ratio = 0`` and
    ``degenerate = True``.
    """

    peak_ratio: np.ndarray
    max_peak_ratio: float
    degenerate: np.ndarray


def _second_moments(values) -> np.ndarray:
    if isinstance(values, ChannelStats):
        return values.second_moment
    return np.asarray(values, dtype=np.float64)


def channel_second_moments(samples) -> ChannelStats:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) sample matrix")
    x = as_matrix(x, "samples")
    return ChannelStats(np.mean(x * x, axis=0), x.shape[0])


def _group_peaks_sq(x: np.ndarray, grouping: Grouping) -> np.ndarray:
    """(n, K) array of per-row group maxima of x^2."""
    if x.shape[1] != grouping.d:
        raise DimensionError(f"samples have {x.shape[1]} channels, grouping expects {grouping.d}")
    return np.max((x * x).reshape(x.shape[0], grouping.num_groups, grouping.g), axis=2)


def group_peak_ratios(samples, grouping: Grouping) -> ExtremalDiagnostics:
    x = as_matrix(samples, "samples")
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    numer = np.mean(_group_peaks_sq(x, grouping), axis=0)
    second_moment = channel_second_moments(x).second_moment
    largest_moment = np.max(second_moment.reshape(grouping.num_groups, grouping.g), axis=1)
    degenerate = largest_moment <= 0
    denom = np.log2(2 * grouping.g) * largest_moment
    peak_ratio = np.divide(numer, denom, out=np.zeros_like(numer), where=~degenerate)
    max_peak_ratio = float(np.max(peak_ratio)) if peak_ratio.size else 0.0
    return ExtremalDiagnostics(peak_ratio, max_peak_ratio, degenerate)


def proxy_objective(second_moment, group_size: int, perm: Permutation | None = None) -> float:
    """Sum over contiguous groups (after ``perm``) of the largest second moment.

    The sum is correctly rounded (``math.fsum``), so partitions with the same
    multiset of group maxima give bit-identical values.
    """
    m = _second_moments(second_moment)
    if perm is not None:
        if len(perm) != m.size:
            raise DimensionError("permutation length does not match channel count")
        m = m[perm.forward]
    grouping = Grouping(m.size, group_size)
    return math.fsum(np.max(m.reshape(grouping.num_groups, grouping.g), axis=1).tolist())


def expected_error_uniform_noise(samples, grouping: Grouping, qmax: int) -> float:
    """Expected error when rounding noise is modelled as Unif(-s/2, s/2).

    Equals ``g / (12 Q^2) * sum_k mean_rows(max_{i in G_k} |x_i|)^2``.
    """
    x = as_matrix(samples, "samples")
    peaks = np.mean(_group_peaks_sq(x, grouping), axis=0)
    return float(grouping.g / (12.0 * qmax**2) * np.sum(peaks))
