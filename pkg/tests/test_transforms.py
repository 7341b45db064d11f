import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permuquant.core import DimensionError, Permutation, apply_perm_cols, apply_perm_rows, matmul
from permuquant.quantizer import QuantConfig
from permuquant.reorder import LayerSpec, candidate_permutation, layer_quant_error, select_permutation, sort_by_moments
from permuquant.statistics import channel_second_moments
from permuquant.synthetic import two_population_layer
from permuquant.transforms import (
    HadamardConfig,
    NormSpec,
    default_block,
    fold_perm_into_norm,
    fold_perm_into_prev_linear,
    fold_perm_into_weight,
    fwht,
    hadamard_cols,
    hadamard_rows,
    hadamard_then_reorder,
    hadamard_transform_layer,
    layernorm_apply,
    norm_apply,
    rmsnorm_apply,
)

from .oracles import reference_layernorm, reference_rmsnorm


def sylvester(n):
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h / np.sqrt(n)


def test_fwht_examples():
    assert fwht([1.0, 1.0, 1.0, 1.0], HadamardConfig(4)).tolist() == [2.0, 0.0, 0.0, 0.0]
    assert fwht([1.0, 0.0, 0.0, 0.0], HadamardConfig(4)).tolist() == [0.5, 0.5, 0.5, 0.5]


@pytest.mark.parametrize("block", [1, 2, 4, 8, 16, 64])
def test_fwht_matches_dense_sylvester_matrix(block):
    rng = np.random.default_rng(block)
    x = rng.standard_normal((3, 64))
    h = sylvester(block)
    dense = np.concatenate([x[:, i:i + block] @ h for i in range(0, 64, block)], axis=1)
    assert np.max(np.abs(fwht(x, HadamardConfig(block)) - dense)) <= 1e-12
    assert np.allclose(h @ h, np.eye(block), atol=1e-15)
    assert np.array_equal(h, h.T)


def test_fwht_involution_and_energy():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(64) * 5
    cfg = HadamardConfig(64)
    y = fwht(x, cfg)
    assert np.max(np.abs(fwht(y, cfg) - x)) <= 1e-12
    assert abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-12


def test_hadamard_config_validation():
    with pytest.raises(ValueError):
        HadamardConfig(12)
    with pytest.raises(DimensionError):
        fwht(np.ones(24), HadamardConfig(16))
    assert default_block(96) == 32
    assert default_block(64) == 64
    assert default_block(7) == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4, 8, 16, 32]))
def test_fwht_properties(seed, block):
    x = np.random.default_rng(seed).standard_normal(32)
    cfg = HadamardConfig(block)
    y = fwht(x, cfg)
    assert np.max(np.abs(fwht(y, cfg) - x)) <= 1e-12
    assert abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-12


@pytest.mark.parametrize("block", [None, 8])
def test_hadamard_then_reorder_reconstructs(block):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 32))
    w = rng.standard_normal((32, 5))
    cfg = HadamardConfig(block or 32)
    for perm in (Permutation.identity(32), Permutation.random(32, rng)):
        xh, wh = hadamard_then_reorder(x, w, perm, cfg)
        assert np.max(np.abs(matmul(xh, wh) - matmul(x, w))) <= 1e-10


def test_hadamard_then_reorder_dimension_mismatch():
    with pytest.raises(DimensionError):
        hadamard_then_reorder(np.ones((2, 8)), np.ones((4, 2)), Permutation.identity(8), HadamardConfig(4))


def test_hadamard_layer_is_transformed_basis():
    rng = np.random.default_rng(2)
    layer = LayerSpec(rng.standard_normal((16, 3)), rng.standard_normal((5, 16)))
    cfg = HadamardConfig(16)
    hl = hadamard_transform_layer(layer, cfg)
    assert np.array_equal(hl.calib_acts, hadamard_rows(layer.calib_acts, cfg))
    assert np.array_equal(hl.weight, hadamard_cols(layer.weight, cfg))
    h = sylvester(16)
    assert np.max(np.abs(hl.weight - h.T @ layer.weight)) <= 1e-12


def test_reordering_uses_post_hadamard_statistics():
    # channel 0 is huge before the transform; after a 4-block Hadamard the
    # energy moves to whichever output coefficient the signal pattern selects.
    rng = np.random.default_rng(3)
    n = 200
    x = np.zeros((n, 8))
    s = rng.standard_normal(n)
    x[:, :4] = np.outer(s, [1.0, -1.0, 1.0, -1.0]) * 10 + 0.1 * rng.standard_normal((n, 4))
    x[:, 4:] = rng.standard_normal((n, 4))
    w = np.ones((8, 2))
    layer = LayerSpec(w, x)
    cfg = HadamardConfig(4)
    hl = hadamard_transform_layer(layer, cfg)

    pre = sort_by_moments(channel_second_moments(x).second_moment)
    post = sort_by_moments(channel_second_moments(hl.calib_acts).second_moment)
    assert pre != post
    assert post.forward[0] == 1  # pattern [1,-1,1,-1] is row 1 of H4

    assert candidate_permutation(hl, 1.0) == post
    decision = select_permutation(hl, QuantConfig(3, 2), [1.0])
    assert decision.perm in (post, Permutation.identity(8))


@pytest.mark.parametrize("seed", range(5))
def test_reorder_plus_hadamard_beats_plain_on_two_populations(seed):
    # heavy-tailed tokens: the regime where rotating helps at all
    layer = two_population_layer(np.random.default_rng(seed), 64, 16, 128, df=3.0)
    cfg = QuantConfig(3, 32)
    plain = layer_quant_error(layer, Permutation.identity(64), cfg)
    hl = hadamard_transform_layer(layer)
    hadamard_only = layer_quant_error(hl, Permutation.identity(64), cfg)
    both = select_permutation(hl, cfg)
    both_err = both.e_reorder if both.accepted else both.e_orig
    assert both.e_orig == hadamard_only
    assert both_err <= plain
    assert both_err <= hadamard_only


def test_hadamard_hurts_magnitude_stable_channels():
    # sign-only tokens are already grid friendly; rotation makes them gaussian
    layer = two_population_layer(np.random.default_rng(0), 64, 16, 128)
    cfg = QuantConfig(3, 32)
    plain = layer_quant_error(layer, Permutation.identity(64), cfg)
    assert layer_quant_error(hadamard_transform_layer(layer), Permutation.identity(64), cfg) > plain


def test_rmsnorm_examples():
    spec = NormSpec("rmsnorm", gamma=np.array([1.0, 2.0]), eps=0.0)
    got = rmsnorm_apply([3.0, 4.0], spec)
    assert got == pytest.approx([0.848528137423857, 2.262741699796952], abs=1e-12)
    assert got.tolist() == pytest.approx(reference_rmsnorm([3.0, 4.0], [1.0, 2.0], 0.0), abs=1e-15)
    unit = np.array([1.0, -1.0, 1.0, -1.0])
    assert np.array_equal(rmsnorm_apply(unit, NormSpec("rmsnorm", gamma=np.ones(4), eps=0.0)), unit)
    assert np.array_equal(rmsnorm_apply(np.zeros(3), NormSpec("rmsnorm")), np.zeros(3))
    assert np.array_equal(rmsnorm_apply(np.zeros(3), NormSpec("rmsnorm", eps=0.0)), np.zeros(3))


def test_layernorm_examples():
    assert layernorm_apply([1.0, -1.0], NormSpec("layernorm", eps=0.0)).tolist() == [1.0, -1.0]
    assert np.array_equal(layernorm_apply(np.full(4, 3.0), NormSpec("layernorm")), np.zeros(4))
    rng = np.random.default_rng(5)
    for _ in range(20):
        x, s, b = rng.standard_normal((3, 12))
        spec = NormSpec("layernorm", mod_scale=s, mod_shift=b)
        expected = reference_layernorm(x.tolist(), spec.eps, s.tolist(), b.tolist())
        assert np.max(np.abs(layernorm_apply(x, spec) - expected)) <= 1e-12


def test_norm_kind_checks():
    with pytest.raises(ValueError):
        rmsnorm_apply([1.0], NormSpec("layernorm"))
    with pytest.raises(ValueError):
        layernorm_apply([1.0], NormSpec("rmsnorm"))
    with pytest.raises(ValueError):
        NormSpec("batchnorm")
    with pytest.raises(ValueError):
        NormSpec("layernorm", mod_scale=np.ones(2))
    with pytest.raises(DimensionError):
        NormSpec("layernorm", gamma=np.ones(3), mod_scale=np.ones(2), mod_shift=np.ones(2))
    with pytest.raises(DimensionError):
        rmsnorm_apply(np.ones(4), NormSpec("rmsnorm", gamma=np.ones(3)))


def test_fold_into_norm_swap_example():
    spec = NormSpec("rmsnorm", gamma=np.array([1.0, 2.0]), eps=0.0)
    swap = Permutation.from_forward([1, 0])
    lhs = apply_perm_cols(rmsnorm_apply([3.0, 4.0], spec)[None, :], swap)[0]
    rhs = rmsnorm_apply(np.array([4.0, 3.0]), fold_perm_into_norm(spec, swap))
    assert lhs.tolist() == pytest.approx([2.262741699796952, 0.848528137423857], abs=1e-12)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_fold_identity_leaves_spec_unchanged():
    spec = NormSpec("layernorm", gamma=np.arange(4.0), mod_scale=np.ones(4), mod_shift=np.zeros(4))
    folded = fold_perm_into_norm(spec, Permutation.identity(4))
    for a, b in zip(spec._params(), folded._params()):
        assert np.array_equal(a, b)
    assert folded.eps == spec.eps and folded.kind == spec.kind


def test_fold_dimension_mismatch():
    with pytest.raises(DimensionError):
        fold_perm_into_norm(NormSpec("rmsnorm", gamma=np.ones(3)), Permutation.identity(4))
    with pytest.raises(DimensionError):
        fold_perm_into_prev_linear(np.ones((2, 3)), Permutation.identity(4))


def test_norm_fold_property_both_kinds():
    rng = np.random.default_rng(6)
    for i in range(500):
        d = int(rng.integers(1, 40))
        perm = Permutation.random(d, rng)
        x = rng.standard_normal((2, d)) * rng.uniform(0.1, 10)
        if i % 2:
            spec = NormSpec("rmsnorm", gamma=rng.standard_normal(d))
        else:
            spec = NormSpec("layernorm", mod_scale=rng.standard_normal(d), mod_shift=rng.standard_normal(d))
        lhs = apply_perm_cols(norm_apply(x, spec), perm)
        rhs = norm_apply(apply_perm_cols(x, perm), fold_perm_into_norm(spec, perm))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_fold_prev_linear():
    w_prev = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(fold_perm_into_prev_linear(w_prev, Permutation.identity(2)), w_prev)
    swapped = fold_perm_into_prev_linear(w_prev, Permutation.from_forward([1, 0]))
    assert swapped.tolist() == [[1, 0], [3, 2], [5, 4]]

    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 5))
    w_prev = rng.standard_normal((5, 8))
    w = rng.standard_normal((8, 3))
    p = Permutation.random(8, rng)
    folded = matmul(matmul(x, fold_perm_into_prev_linear(w_prev, p)), fold_perm_into_weight(w, p))
    assert np.max(np.abs(folded - matmul(matmul(x, w_prev), w))) <= 1e-10
    assert np.array_equal(fold_perm_into_weight(w, p), apply_perm_rows(w, p))
