import numpy as np
import pytest

from fixyforge import model_ir as mir
from fixyforge import quantization as q
from fixyforge.errors import DataError, NumericError, ParameterError


def test_quantize_known_values():
    t = q.quantize_weights(np.array([0.5, -0.25, 0.0]))
    assert t.scale == pytest.approx(0.5 / 127)
    np.testing.assert_array_equal(t.values, [127, -64, 0])


def test_quantize_all_zero():
    t = q.quantize_weights(np.zeros((3, 3)))
    assert t.scale == 1.0
    assert not t.values.any()


def test_quantize_rejects_nonfinite():
    with pytest.raises(DataError):
        q.quantize_weights(np.array([1.0, np.nan]))
    with pytest.raises(DataError):
        q.quantize_weights(np.array([np.inf]))


def test_quantize_roundtrip_error_bound():
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = rng.normal(0, 2, size=rng.integers(2, 40))
        t = q.quantize_weights(w)
        err = np.abs(t.dequantize() - w)
        assert err.max() <= t.scale / 2 + 1e-12
        assert err.max() <= np.abs(w).max() / 254 + 1e-12


def test_quantize_per_channel():
    w = np.stack([np.full((3, 3), 0.5), np.full((3, 3), 2.0)])
    t = q.quantize_weights(w, "per_channel")
    assert t.scale.shape == (2,)
    np.testing.assert_array_equal(t.values, np.full((2, 3, 3), 127))
    np.testing.assert_allclose(t.dequantize(), w)


def test_prune_magnitude_below():
    t = q.QuantTensor(np.array([5, 0, -3, 100], np.int8), np.float64(1.0))
    pruned, report = q.prune_weights(t, q.MagnitudeBelow(4))
    np.testing.assert_array_equal(pruned.values, [5, 0, 0, 100])
    assert report.sparsity == 0.5
    assert report.removed_zero == 1 and report.removed_small == 1
    assert report.kept + report.removed_zero + report.removed_small == 4


def test_prune_exact_zero_dense():
    t = q.QuantTensor(np.array([1, 2, 3], np.int8), np.float64(1.0))
    _, report = q.prune_weights(t, q.ExactZero())
    assert report.sparsity == 0.0


def test_prune_target_sparsity_model_wide():
    model = mir.build_mobilenet(0.25, seed=2)
    tensors = [q.quantize_weights(model.weights[l.id]["kernel"]) for l in model.layers if l.is_conv]
    _, report = q.prune_model(tensors, q.TargetSparsity(0.5))
    assert report.sparsity >= 0.5
    total = report.total
    # minimality: one fewer pruned weight would undershoot the target
    assert (report.removed_zero + report.removed_small - 1) / total < 0.5


def test_prune_monotone_subsets():
    rng = np.random.default_rng(9)
    t = q.QuantTensor(rng.integers(-127, 128, 200).astype(np.int8), np.float64(1.0))
    prev = None
    for s in (0.1, 0.3, 0.5, 0.8):
        pruned, _ = q.prune_weights(t, q.TargetSparsity(s))
        mask = pruned.values == 0
        if prev is not None:
            assert np.all(mask | ~prev)  # earlier pruned positions stay pruned
        prev = mask


def test_prune_policy_validation():
    with pytest.raises(ParameterError):
        q.MagnitudeBelow(200)
    with pytest.raises(ParameterError):
        q.TargetSparsity(1.0)


def test_fold_bn_identity():
    regs = q.fold_bn(np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), 0.0)
    np.testing.assert_allclose(regs.dequantized_scale(), 1.0, rtol=2**-15)
    np.testing.assert_array_equal(regs.bias, 0)
    assert regs.register_count == 8


def test_fold_bn_known_values():
    regs = q.fold_bn(np.array([2.0]), np.array([0.0]), np.array([1.0]), np.array([3.0]), 1.0)
    assert regs.real_scale[0] == pytest.approx(1.0)
    assert regs.real_bias[0] == pytest.approx(-1.0)
    assert regs.bias[0] == -1


def test_fold_bn_degenerate():
    with pytest.raises(NumericError):
        q.fold_bn(np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1), 0.0)
    with pytest.raises(NumericError):
        q.fold_bn(np.ones(1), np.zeros(1), np.zeros(1), np.array([-1.0]), 0.5)


def test_fold_bn_encoding_precision():
    rng = np.random.default_rng(11)
    n = 1000
    gamma = rng.uniform(0.2, 3.0, n)
    beta = rng.normal(0, 1, n)
    mean = rng.normal(0, 1, n)
    var = rng.uniform(0.05, 4.0, n)
    regs = q.fold_bn(gamma, beta, mean, var, 1e-3)
    rel = np.abs(regs.dequantized_scale() - regs.real_scale) / np.abs(regs.real_scale)
    assert rel.max() <= 2**-15


def test_fold_bn_integer_matches_real():
    # golden-model comparison: integer BN path vs real-valued BN, error
    # measured relative to the output range
    rng = np.random.default_rng(13)
    n = 64
    gamma = rng.uniform(0.5, 1.5, n)
    beta = rng.normal(0, 0.5, n)
    mean = rng.normal(0, 1.0, n)
    var = rng.uniform(0.25, 2.0, n)
    regs = q.fold_bn(gamma, beta, mean, var, 1e-3)
    acc = rng.integers(-(2**20), 2**20, size=(500, n)).astype(np.int64)
    prod = acc * regs.mant.astype(np.int64)
    out = q.shift_round_half_away(prod, regs.exp.astype(np.int64)) + regs.bias
    real = regs.real_scale * acc + regs.real_bias
    err = np.abs(out - real)
    assert err.max() / np.abs(real).max() <= 2**-14


def test_apply_q_examples():
    assert q.apply_q(0, q.QParams(4)) == 0
    assert q.apply_q(2560, q.QParams(4)) == 160
    assert q.apply_q(10**6, q.QParams(4)) == 255  # saturates
    assert q.apply_q(-5, q.QParams(0)) == 0  # unsigned clamps at zero
    assert q.apply_q(-300, q.QParams(0, output_signed=True)) == -128


def test_apply_q_monotone():
    params = q.QParams(3)
    accs = np.arange(-5000, 5000, 7, dtype=np.int64)
    out = q.apply_q(accs, params)
    assert np.all(np.diff(out) >= 0)


def test_apply_q_shift_range():
    with pytest.raises(ParameterError):
        q.QParams(32)


def test_shift_round_half_away():
    assert q.shift_round_half_away(np.int64(7), 1) == 4      # 3.5 away from zero
    assert q.shift_round_half_away(np.int64(-7), 1) == -4
    assert q.shift_round_half_away(np.int64(5), 1) == 3      # 2.5 -> 3
    assert q.shift_round_half_away(np.int64(9), 0) == 9


def test_fold_bn_scale_out_of_register_range():
    with pytest.raises(NumericError, match="16-bit register range"):
        q.fold_bn(np.array([1.0]), np.zeros(1), np.zeros(1), np.array([1e-12]), 0.0)
