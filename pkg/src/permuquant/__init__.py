"""Per-group symmetric quantization with second-moment channel reordering."""

from .core import DimensionError, Grouping, Permutation, apply_perm_cols, apply_perm_rows, matmul
from .quantizer import QuantConfig, error_upper_bound, fake_quantize, quant_error, quantize_dequantize
from .reorder import (
    DEFAULT_ALPHA_GRID,
    LayerSpec,
    ReorderDecision,
    brute_force_min_proxy,
    joint_scores,
    layer_quant_error,
    select_permutation,
    sort_by_moments,
)
from .statistics import channel_second_moments, expected_error_uniform_noise, group_peak_ratios, proxy_objective

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_ALPHA_GRID",
    "DimensionError",
    "Grouping",
    "LayerSpec",
    "Permutation",
    "QuantConfig",
    "ReorderDecision",
    "apply_perm_cols",
    "apply_perm_rows",
    "brute_force_min_proxy",
    "channel_second_moments",
    "error_upper_bound",
    "expected_error_uniform_noise",
    "fake_quantize",
    "group_peak_ratios",
    "joint_scores",
    "layer_quant_error",
    "matmul",
    "proxy_objective",
    "quant_error",
    "quantize_dequantize",
    "select_permutation",
    "sort_by_moments",
]
