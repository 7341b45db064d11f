"""Seeded invariant suites run by ``permuquant validate``.

Each suite returns a :class:`SuiteResult`; failures are counted, never raised.
``worst_slack`` is the smallest margin by which a check passed (negative
means the worst case failed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Grouping, Permutation, apply_perm_cols, apply_perm_rows, matmul
from .quantizer import QuantConfig, error_upper_bound, quant_error, quantize_dequantize
from .reorder import brute_force_min_proxy, sort_by_moments
from .statistics import channel_second_moments, expected_error_uniform_noise, group_peak_ratios, proxy_objective
from .transforms import (
    HadamardConfig,
    NormSpec,
    fold_perm_into_norm,
    fold_perm_into_prev_linear,
    fwht,
    hadamard_then_reorder,
    norm_apply,
)

NORM_TOL = 1e-12
PIPELINE_TOL = 1e-10


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    total: int
    failures: int
    worst_slack: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (
            f"{status} {self.suite}: {self.total - self.failures}/{self.total} checks passed, "
            f"worst-case slack {self.worst_slack:.3e}"
        )
        return f"{text} ({self.detail})" if self.detail else text


def _lognormal_rows(rng, n, d, spread=1.0):
    return rng.standard_normal((n, d)) * np.exp(spread * rng.standard_normal(d))


def suite_sorting(seed: int, instances: int = 200) -> SuiteResult:
    rng = np.random.default_rng(seed)
    failures, slack = 0, np.inf
    for _ in range(instances):
        g = int(rng.choice([2, 3, 4]))
        d = g * int(rng.integers(1, 12 // g + 1))
        second_moment = rng.lognormal(0.0, 1.5, d)
        sorted_value = proxy_objective(second_moment, g, sort_by_moments(second_moment))
        best, _ = brute_force_min_proxy(second_moment, g)
        gap = best - sorted_value
        slack = min(slack, gap)
        failures += sorted_value != best
    return SuiteResult("sorting", instances, failures, slack, f"{instances - failures}/{instances} oracle matches")


def suite_bounds(seed: int, samples: int = 1000) -> SuiteResult:
    rng = np.random.default_rng(seed)
    failures, slack = 0, np.inf
    for i in range(samples):
        bits = (3, 4)[i % 2]
        g = (8, 32)[(i // 2) % 2]
        cfg = QuantConfig(bits, g)
        x = rng.standard_t(3, 64) * np.exp(rng.standard_normal(64))
        x_hat, _ = quantize_dequantize(x, cfg)
        margin = error_upper_bound(x, Grouping(64, g), cfg.qmax) - quant_error(x, x_hat)
        slack = min(slack, margin)
        failures += margin < 0
    return SuiteResult("bounds", samples, failures, slack, f"{samples - failures}/{samples} samples under bound")


def suite_folding(seed: int, tuples: int = 500) -> SuiteResult:
    rng = np.random.default_rng(seed)
    failures, worst_norm, worst_pipe = 0, 0.0, 0.0
    for i in range(tuples):
        d = int(rng.choice([4, 8, 16, 32]))
        perm = Permutation.random(d, rng)
        x = rng.standard_normal((6, d)) * 3.0
        if i % 2:
            spec = NormSpec("rmsnorm", gamma=rng.standard_normal(d))
        else:
            spec = NormSpec(
                "layernorm", mod_scale=rng.standard_normal(d), mod_shift=rng.standard_normal(d)
            )
        w = rng.standard_normal((d, 5))
        w_prev = rng.standard_normal((7, d))
        x_prev = rng.standard_normal((6, 7))

        lhs = apply_perm_cols(norm_apply(x, spec), perm)
        rhs = norm_apply(apply_perm_cols(x, perm), fold_perm_into_norm(spec, perm))
        dev_norm = float(np.max(np.abs(lhs - rhs)))

        plain = matmul(norm_apply(x, spec), w)
        folded = matmul(rhs, apply_perm_rows(w, perm))
        dev_norm_pipe = float(np.max(np.abs(plain - folded)))

        plain = matmul(matmul(x_prev, w_prev), w)
        folded = matmul(matmul(x_prev, fold_perm_into_prev_linear(w_prev, perm)), apply_perm_rows(w, perm))
        dev_lin_pipe = float(np.max(np.abs(plain - folded)))

        worst_norm = max(worst_norm, dev_norm)
        worst_pipe = max(worst_pipe, dev_norm_pipe, dev_lin_pipe)
        failures += dev_norm > NORM_TOL or max(dev_norm_pipe, dev_lin_pipe) > PIPELINE_TOL
    slack = min(NORM_TOL - worst_norm, PIPELINE_TOL - worst_pipe)
    detail = f"max norm deviation {worst_norm:.2e}, max pipeline deviation {worst_pipe:.2e}"
    return SuiteResult("folding", tuples, failures, slack, detail)


def suite_hadamard(seed: int, vectors: int = 100) -> SuiteResult:
    rng = np.random.default_rng(seed)
    failures, worst_vec, worst_rec, total = 0, 0.0, 0.0, 0
    for block in (4, 16, 64):
        cfg = HadamardConfig(block)
        for _ in range(vectors):
            x = rng.standard_normal(128) * np.exp(rng.standard_normal(128))
            y = fwht(x, cfg)
            dev = max(
                float(np.max(np.abs(fwht(y, cfg) - x))),
                abs(float(np.linalg.norm(y) - np.linalg.norm(x))),
            )
            worst_vec = max(worst_vec, dev)
            failures += dev > NORM_TOL
            total += 1
        x = rng.standard_normal((8, 128))
        w = rng.standard_normal((128, 4))
        xh, wh = hadamard_then_reorder(x, w, Permutation.random(128, rng), cfg)
        dev = float(np.max(np.abs(matmul(xh, wh) - matmul(x, w))))
        worst_rec = max(worst_rec, dev)
        failures += dev > PIPELINE_TOL
        total += 1
    slack = min(NORM_TOL - worst_vec, PIPELINE_TOL - worst_rec)
    detail = f"max involution/norm deviation {worst_vec:.2e}, max reconstruction deviation {worst_rec:.2e}"
    return SuiteResult("hadamard", total, failures, slack, detail)


def suite_sandwich(seed: int, partitions: int = 100) -> SuiteResult:
    rng = np.random.default_rng(seed)
    d, n = 64, 500
    x = rng.standard_t(5, (n, d)) * np.exp(rng.standard_normal(d))
    failures, slack = 0, np.inf
    for i in range(partitions):
        g = (4, 8, 16)[i % 3]
        q = QuantConfig((3, 4)[i % 2], g).qmax
        perm = Permutation.random(d, rng)
        xp = apply_perm_cols(x, perm)
        grouping = Grouping(d, g)
        expected = expected_error_uniform_noise(xp, grouping, q)
        proxy = proxy_objective(channel_second_moments(xp), g)
        lower = g / (12.0 * q**2) * proxy
        max_peak_ratio = group_peak_ratios(xp, grouping).max_peak_ratio
        upper = max_peak_ratio * np.log2(2 * g) * lower
        lo_margin = expected + 1e-10 - lower
        hi_margin = upper * (1 + 1e-12) - expected
        slack = min(slack, lo_margin, hi_margin)
        failures += lo_margin < 0 or hi_margin < 0
    return SuiteResult("sandwich", partitions, failures, slack, "lower bound and max_peak_ratio upper bound")


SUITES = {
    "bounds": suite_bounds,
    "sorting": suite_sorting,
    "folding": suite_folding,
    "hadamard": suite_hadamard,
    "sandwich": suite_sandwich,
}


def validate(suite: str, seed: int = 42) -> SuiteResult:
    try:
        fn = SUITES[suite]
    except KeyError:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}") from None
    return fn(seed)
