import math

import numpy as np
import pytest

from permuquant.core import Grouping, Permutation, apply_perm_cols
from permuquant.quantizer import QuantConfig, fake_quantize
from permuquant.statistics import (
    ChannelStats,
    channel_second_moments,
    expected_error_uniform_noise,
    group_peak_ratios,
    proxy_objective,
)


def test_second_moment_examples():
    assert channel_second_moments([[3.0, -4.0]]).second_moment.tolist() == [9.0, 16.0]
    stats = channel_second_moments([[1.0, 0.0], [-1.0, 2.0]])
    assert stats.second_moment.tolist() == [1.0, 2.0]
    assert stats.n_samples == 2
    with pytest.raises(ValueError):
        channel_second_moments(np.zeros((0, 3)))


def test_second_moments_vs_double_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 16)) * rng.lognormal(0, 1, 16)
    rows = x.tolist()
    expected = []
    for i in range(16):
        acc = 0.0
        for r in rows:
            acc += r[i] * r[i]
        expected.append(acc / len(rows))
    assert np.max(np.abs(channel_second_moments(x).second_moment - expected)) <= 1e-10


def test_second_moments_permutation_equivariant():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 12))
    p = Permutation.random(12, rng)
    lhs = channel_second_moments(apply_perm_cols(x, p)).second_moment
    rhs = channel_second_moments(x).permuted(p).second_moment
    assert np.array_equal(lhs, rhs)


def test_channel_stats_invariants():
    with pytest.raises(ValueError):
        ChannelStats(np.array([1.0, -1.0]), 3)
    with pytest.raises(ValueError):
        ChannelStats(np.array([1.0]), 0)


def test_peak_ratio_constant_channels():
    x = np.full((10, 4), 2.5)
    diag = group_peak_ratios(x, Grouping(4, 2))
    assert diag.peak_ratio.tolist() == [0.5, 0.5]
    assert diag.max_peak_ratio == 0.5


def test_peak_ratio_single_channel_groups():
    rng = np.random.default_rng(2)
    diag = group_peak_ratios(rng.standard_normal((20, 3)), Grouping(3, 1))
    assert np.allclose(diag.peak_ratio, 1.0, rtol=0, atol=1e-15)


def test_peak_ratio_degenerate_group_is_flagged():
    x = np.array([[0.0, 0.0, 1.0, 2.0], [0.0, 0.0, -1.0, 0.5]])
    diag = group_peak_ratios(x, Grouping(4, 2))
    assert diag.degenerate.tolist() == [True, False]
    assert diag.peak_ratio[0] == 0.0
    assert np.all(np.isfinite(diag.peak_ratio))


def test_peak_ratio_matches_recomputation():
    rng = np.random.default_rng(3)
    x = rng.lognormal(0.0, 1.0, (10000, 64)) * rng.lognormal(0.0, 1.0, 64)
    g = 16
    diag = group_peak_ratios(x, Grouping(64, g))
    for k in range(4):
        cols = x[:, k * g:(k + 1) * g]
        numer = sum(max(v * v for v in row) for row in cols.tolist()) / len(cols)
        second_moment = [sum(v * v for v in col) / len(cols) for col in cols.T.tolist()]
        expected = numer / (math.log2(2 * g) * max(second_moment))
        assert abs(diag.peak_ratio[k] - expected) <= 1e-10
    assert diag.max_peak_ratio == max(diag.peak_ratio)


def test_peak_ratio_empirical_cdf_shape():
    rng = np.random.default_rng(4)
    values = []
    for g in (4, 8, 16, 32):
        x = rng.standard_normal((2000, 128)) * np.exp(rng.standard_normal(128))
        values.extend(group_peak_ratios(x, Grouping(128, g)).peak_ratio.tolist())
    xs = np.sort(values)
    cdf = np.arange(1, xs.size + 1) / xs.size
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[-1] == 1.0
    assert np.all(xs > 0)


def test_proxy_objective_examples():
    second_moment = [25.0, 16.0, 9.0, 4.0, 1.0, 1.0]
    assert proxy_objective(second_moment, 2) == 35.0
    assert proxy_objective(second_moment, 6) == 25.0
    assert proxy_objective(ChannelStats(np.array(second_moment), 1), 3) == 29.0


def test_proxy_objective_vs_naive_loop():
    rng = np.random.default_rng(5)
    for _ in range(50):
        second_moment = rng.lognormal(0, 2, 24)
        p = Permutation.random(24, rng)
        order = p.forward.tolist()
        total = 0.0
        for k in range(0, 24, 4):
            total += max(second_moment[order[k + j]] for j in range(4))
        assert proxy_objective(second_moment, 4, p) == pytest.approx(total, rel=1e-15)


def test_expected_error_examples():
    value = expected_error_uniform_noise([[0.5, -2.0, 1.0, 3.0]], Grouping(4, 4), 3)
    assert value == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert expected_error_uniform_noise(np.zeros((3, 8)), Grouping(8, 4), 3) == 0.0


def test_expected_error_vs_simulated_uniform_noise():
    rng = np.random.default_rng(6)
    g, q = 8, 3
    x = rng.standard_normal((5000, 32)) * np.exp(0.5 * rng.standard_normal(32))
    peaks = np.max(np.abs(x).reshape(5000, 4, g), axis=2)
    s = np.repeat(peaks / q, g, axis=1)
    noise = rng.uniform(-0.5, 0.5, x.shape) * s
    simulated = float(np.mean(np.sum(noise**2, axis=1)))
    formula = expected_error_uniform_noise(x, Grouping(32, g), q)
    assert abs(simulated - formula) / formula <= 0.05


def test_expected_error_vs_actual_rounding_smooth_inputs():
    # 8-bit codes and wide groups: rounding noise is close to uniform, and the
    # one error-free peak per group costs only 1/g.
    rng = np.random.default_rng(7)
    cfg = QuantConfig(8, 32)
    x = rng.standard_normal((5000, 64))
    actual = float(np.mean(np.sum((fake_quantize(x, cfg) - x) ** 2, axis=1)))
    formula = expected_error_uniform_noise(x, Grouping(64, 32), cfg.qmax)
    assert abs(actual - formula) / formula <= 0.05


def test_sandwich_bounds():
    rng = np.random.default_rng(8)
    x = rng.standard_t(4, (400, 48)) * np.exp(rng.standard_normal(48))
    for i in range(60):
        g = (2, 4, 8)[i % 3]
        q = 3
        xp = apply_perm_cols(x, Permutation.random(48, rng))
        grouping = Grouping(48, g)
        e = expected_error_uniform_noise(xp, grouping, q)
        lower = g / (12 * q * q) * proxy_objective(channel_second_moments(xp), g)
        assert lower <= e + 1e-10
        max_peak_ratio = group_peak_ratios(xp, grouping).max_peak_ratio
        assert e <= max_peak_ratio * math.log2(2 * g) * lower * (1 + 1e-12)
