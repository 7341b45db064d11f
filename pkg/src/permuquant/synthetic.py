"""Synthetic calibration layers standing in for real model activations."""

from __future__ import annotations

import numpy as np

from .reorder import LayerSpec


def heavy_tailed_layer(
    rng: np.random.Generator,
    d: int,
    d_out: int,
    tokens: int,
    spread: float = 0.5,
    df: float = 8.0,
    predecessor: str = "none",
) -> LayerSpec:
    """Student-t activations with lognormal per-channel scales.

    ``spread`` is the log-std of the activation channel scales; weight rows get
    half of it so the activation side dominates but not completely.
    """
    act_scale = np.exp(spread * rng.standard_normal(d))
    w_scale = np.exp(0.5 * spread * rng.standard_normal(d))
    x = rng.standard_t(df, size=(tokens, d)) * act_scale
    w = rng.standard_normal((d, d_out)) * w_scale[:, None] / np.sqrt(d)
    return LayerSpec(w, x, predecessor)


def two_population_layer(
    rng: np.random.Generator,
    d: int,
    d_out: int,
    tokens: int,
    ratio: float = 100.0,
    jitter: float = 0.1,
    predecessor: str = "none",
    df: float | None = None,
) -> LayerSpec:
    """Even channels carry ``ratio`` times the second moment of odd channels.

    By default each channel keeps a stable magnitude (up to a relative
    ``jitter``) with a random sign per token. With ``df`` set, token values
    are Student-t draws instead, so rare tokens spike across channels.
    """
    scale = np.where(np.arange(d) % 2 == 0, np.sqrt(ratio), 1.0)
    if df is None:
        mag = 1.0 + jitter * rng.uniform(-1.0, 1.0, (tokens, d))
        x = rng.choice([-1.0, 1.0], (tokens, d)) * mag * scale
    else:
        x = rng.standard_t(df, (tokens, d)) * scale
    w = rng.standard_normal((d, d_out)) / np.sqrt(d)
    return LayerSpec(w, x, predecessor)


def predecessor_params(rng: np.random.Generator, kind: str, d: int, d_prev: int | None = None):
    """Parameters for the module feeding a layer, in the layout the manifest expects.

    ``rmsnorm`` -> (1, d) gamma; ``layernorm_modulated`` -> (2, d) rows
    (scale, shift); ``linear`` -> (d_prev, d) weight; ``none`` -> ``None``.
    """
    if kind == "rmsnorm":
        return 1.0 + 0.1 * rng.standard_normal((1, d))
    if kind == "layernorm_modulated":
        return 0.1 * rng.standard_normal((2, d))
    if kind == "linear":
        d_prev = d_prev or d
        return rng.standard_normal((d_prev, d)) / np.sqrt(d_prev)
    if kind == "none":
        return None
    raise ValueError(f"unknown predecessor kind {kind!r}")
