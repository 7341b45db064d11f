"""Second-moment channel reordering with a calibration-based acceptance rule.

Channels are ranked by a blend of activation and weight second moments,
sorted in descending order and grouped contiguously. The best blend weight
``alpha`` is chosen on calibration data, and the resulting permutation is
kept only if it lowers the calibration error by more than ``tau``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, Permutation, apply_perm_cols, apply_perm_rows, as_matrix, matmul
from .quantizer import QuantConfig, fake_quantize
from .statistics import channel_second_moments

DEFAULT_ALPHA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
PREDECESSORS = ("linear", "rmsnorm", "layernorm_modulated", "none")
BRUTE_FORCE_MAX_D = 14


@dataclass(frozen=True)
class LayerSpec:
    """One linear layer: ``weight`` is (d_in, d_out), ``calib_acts`` is (n, d_in)."""

    weight: np.ndarray
    calib_acts: np.ndarray
    predecessor: str = "none"

    def __post_init__(self):
        w = as_matrix(self.weight, "weight")
        x = as_matrix(self.calib_acts, "calib_acts")
        if x.shape[0] < 1:
            raise ValueError("need at least one calibration row")
        if w.shape[0] != x.shape[1]:
            raise DimensionError(
                f"weight has {w.shape[0]} input channels, activations have {x.shape[1]}"
            )
        if self.predecessor not in PREDECESSORS:
            raise ValueError(f"unknown predecessor kind {self.predecessor!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "calib_acts", x)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ReorderDecision:
    alpha: float
    perm: Permutation
    e_orig: float
    e_reorder: float
    accepted: bool
    rel_improvement: float
    candidates: dict[float, float] = field(default_factory=dict)


def sort_by_moments(second_moment) -> Permutation:
    """Descending order of ``second_moment``; ties keep ascending original index."""
    m = np.asarray(second_moment, dtype=np.float64)
    if m.ndim != 1 or m.size == 0:
        raise ValueError("need a non-empty 1-D array of second moments")
    return Permutation.from_forward(np.argsort(-m, kind="stable"))


def _partitions(items: tuple[int, ...], g: int):
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for mates in itertools.combinations(rest, g - 1):
        remaining = tuple(i for i in rest if i not in mates)
        for tail in _partitions(remaining, g):
            yield ((first, *mates),) + tail


def brute_force_min_proxy(second_moment, g: int) -> tuple[float, tuple[tuple[int, ...], ...]]:
    """Exhaustive minimum of ``sum_k max second_moment`` over all partitions into size-``g`` groups.

    Only feasible for tiny ``d``; used as an oracle for the sorting rule.
    """
    m = [float(v) for v in second_moment]
    d = len(m)
    if d > BRUTE_FORCE_MAX_D:
        raise ValueError(f"d={d} is too large for exhaustive search (max {BRUTE_FORCE_MAX_D})")
    if g < 1 or d % g:
        raise ValueError(f"group size {g} does not divide {d}")
    best_value, best_part = None, None
    for part in _partitions(tuple(range(d)), g):
        value = math.fsum(max(m[i] for i in group) for group in part)
        if best_value is None or value < best_value:
            best_value, best_part = value, part
    return best_value, best_part


def joint_scores(act_moments, weight_moments, alpha: float) -> np.ndarray:
    a = np.asarray(act_moments, dtype=np.float64)
    w = np.asarray(weight_moments, dtype=np.float64)
    if a.shape != w.shape:
        raise DimensionError("activation and weight moments differ in length")
    if np.any(a < 0) or np.any(w < 0):
        raise ValueError("second moments must be nonnegative")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    # numpy defines 0.0 ** 0.0 == 1.0
    return a**alpha * w ** (1.0 - alpha)


def weight_second_moments(weight) -> np.ndarray:
    """Mean over output channels of ``W[i, :]**2``, one value per input channel."""
    w = as_matrix(weight, "weight")
    return np.mean(w * w, axis=1)


def candidate_permutation(layer: LayerSpec, alpha: float) -> Permutation:
    act_moments = channel_second_moments(layer.calib_acts).second_moment
    return sort_by_moments(joint_scores(act_moments, weight_second_moments(layer.weight), alpha))


def layer_quant_error(
    layer: LayerSpec, perm: Permutation, cfg: QuantConfig, reference: np.ndarray | None = None
) -> float:
    """Squared Frobenius error of ``Q(XP) Q(P^T W)`` against ``XW`` on calibration rows."""
    if len(perm) != layer.d_in:
        raise DimensionError(f"permutation length {len(perm)} != d_in {layer.d_in}")
    if layer.d_in % cfg.group_size:
        raise DimensionError(f"group size {cfg.group_size} does not divide d_in {layer.d_in}")
    if reference is None:
        reference = matmul(layer.calib_acts, layer.weight)
    xq = fake_quantize(apply_perm_cols(layer.calib_acts, perm), cfg, axis=1)
    wq = fake_quantize(apply_perm_rows(layer.weight, perm), cfg, axis=0)
    diff = matmul(xq, wq) - reference
    return float(np.sum(diff * diff))


def accept_permutation(e_orig: float, e_reorder: float, tau: float) -> tuple[bool, float]:
    """Return ``(accepted, relative improvement)``; acceptance needs a strict ``> tau``."""
    if e_orig <= 0:
        return False, 0.0
    rel = (e_orig - e_reorder) / e_orig
    return rel > tau, rel


def select_permutation(
    layer: LayerSpec,
    cfg: QuantConfig,
    alpha_grid=DEFAULT_ALPHA_GRID,
    tau: float = 0.0,
) -> ReorderDecision:
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValueError("alpha grid is empty")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError("alpha values must lie in [0, 1]")
    if tau < 0:
        raise ValueError("tau must be >= 0")

    reference = matmul(layer.calib_acts, layer.weight)
    act_moments = channel_second_moments(layer.calib_acts).second_moment
    weight_moments = weight_second_moments(layer.weight)

    candidates: dict[float, float] = {}
    best = None
    for alpha in sorted(set(grid)):
        perm = sort_by_moments(joint_scores(act_moments, weight_moments, alpha))
        err = layer_quant_error(layer, perm, cfg, reference)
        candidates[alpha] = err
        # strict < keeps the smallest alpha on ties
        if best is None or err < best[1]:
            best = (alpha, err, perm)

    alpha, e_reorder, perm = best
    e_orig = layer_quant_error(layer, Permutation.identity(layer.d_in), cfg, reference)
    accepted, rel = accept_permutation(e_orig, e_reorder, tau)
    if not accepted:
        perm = Permutation.identity(layer.d_in)
    return ReorderDecision(alpha, perm, e_orig, e_reorder, accepted, rel, candidates)
