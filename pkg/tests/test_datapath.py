import itertools

import numpy as np
import pytest

from fixyforge import datapath as dp
from fixyforge import model_ir as mir
from fixyforge import quantization as q
from fixyforge.errors import OverflowInfeasibleError


def minimal_signed_digit_counts(max_pos=9):
    """Exhaustive oracle: minimal non-zero digit count over every signed-digit
    representation with positions 0..max_pos-1."""
    best: dict[int, int] = {}
    for digits in itertools.product((-1, 0, 1), repeat=max_pos):
        value = sum(d << p for p, d in enumerate(digits))
        nz = sum(1 for d in digits if d)
        if value not in best or nz < best[value]:
            best[value] = nz
    return best


def test_csd_trivial_cases():
    assert dp.csd_encode(0).digits == ()
    assert dp.csd_encode(7).digits == ((3, 1), (0, -1))
    assert dp.csd_encode(-1).digits == ((0, -1),)
    assert dp.csd_encode(3).digits == ((2, 1), (0, -1))


def test_csd_properties_exhaustive():
    oracle = minimal_signed_digit_counts()
    for w in range(-128, 128):
        enc = dp.csd_encode(w)
        assert enc.value() == w
        positions = sorted(p for p, _ in enc.digits)
        assert all(b - a >= 2 for a, b in zip(positions, positions[1:]))  # non-adjacent
        assert len(enc) == oracle[w]  # minimal
        assert len(enc) <= bin(abs(w)).count("1")  # never worse than binary
        assert len(enc) <= (8 + 1 + 1) // 2  # theoretical bound for 8-bit values
        # canonical: re-encoding the reconstructed value is idempotent
        assert dp.csd_encode(enc.value()) == enc


def test_plan_scaler():
    plan = dp.plan_scaler(3)
    assert plan.terms.digits == ((2, 1), (0, -1))
    assert plan.adder_count == 1
    assert dp.plan_scaler(64).adder_count == 0  # pure wire shift
    assert dp.plan_scaler(0).is_pruned
    assert dp.plan_scaler(5, pruned=True).is_pruned
    assert dp.plan_scaler(5, pruned=True).evaluate(100) == 0


def test_plan_evaluation_exhaustive():
    for w in range(-127, 128):
        plan = dp.plan_scaler(w)
        for x in (0, 1, 17, 128, 255):
            assert plan.evaluate(x) == w * x


def _stage_layer(kind, k, cin, cout):
    return mir.Layer("s", kind, (k, k), 1, "same", cin, cout)


def test_precision_all_ones_3x3():
    layer = _stage_layer("conv2d", 3, 1, 1)
    qt = q.QuantTensor(np.ones((1, 1, 3, 3), np.int8), np.float64(1.0))
    pm = dp.analyze_precision(layer, qt, (0, 255))
    assert pm.acc_range == (0, 9 * 255)
    assert pm.acc_bits == 13


def test_precision_all_zero():
    layer = _stage_layer("conv2d", 3, 1, 1)
    qt = q.QuantTensor(np.zeros((1, 1, 3, 3), np.int8), np.float64(1.0))
    pm = dp.analyze_precision(layer, qt, (0, 255))
    assert pm.acc_bits == 1
    assert np.all(pm.product_bits == 1)


def test_precision_soundness_and_minimality():
    rng = np.random.default_rng(21)
    for _ in range(50):
        cin, cout = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        layer = _stage_layer("conv2d", 3, cin, cout)
        qt = q.QuantTensor(rng.integers(-127, 128, (cout, cin, 3, 3)).astype(np.int8),
                           np.float64(1.0))
        pm = dp.analyze_precision(layer, qt, (0, 255))
        taps = qt.values.reshape(cout, -1).astype(np.int64)
        # randomized inputs never escape the analyzed interval
        xs = rng.integers(0, 256, size=(1000, taps.shape[1]))
        accs = xs @ taps.T
        assert accs.max() <= pm.acc_range[1] and accs.min() >= pm.acc_range[0]
        # the corner input reaches the bound exactly, and one less bit overflows
        for ch in range(cout):
            corner = dp.maximizing_input(layer, qt, (0, 255), ch)
            peak = int((corner * taps[ch]).sum())
            assert peak == pm.acc_range_per_ch[ch, 1]
        top = int(pm.acc_range_per_ch[:, 1].max())
        bot = int(pm.acc_range_per_ch[:, 0].min())
        cap = 1 << (pm.acc_bits - 1)
        assert top < cap and bot >= -cap
        assert top >= (cap >> 1) or bot < -(cap >> 1)  # acc_bits - 1 overflows


def test_precision_overflow_infeasible():
    # 1x1 conv with enormous fan-in pushes the accumulator past 32 bits
    layer = _stage_layer("pointwise_conv2d", 1, 70000, 1)
    qt = q.QuantTensor(np.full((1, 70000, 1, 1), 127, np.int8), np.float64(1.0))
    with pytest.raises(OverflowInfeasibleError):
        dp.analyze_precision(layer, qt, (0, 255))


def _build_simple_stage(values, relu=True, input_range=(0, 255)):
    cout, cin, kh, kw = values.shape
    layer = _stage_layer("conv2d", kh, cin, cout)
    qt = q.QuantTensor(values.astype(np.int8), np.float64(1.0))
    bn = q.identity_bn(cout)
    return dp.build_stage(layer, qt, bn, q.QParams(0, output_signed=not relu),
                          (8, 8, cin), (8, 8, cout), input_range, relu=relu)


def test_build_stage_tree_shape(mobilenet_025_pipeline):
    first = mobilenet_025_pipeline.stages[0]
    assert first.layer.id == "conv1"
    assert first.q_weights.values.size == 216
    assert len(first.plans()) == 216
    # unpruned tree depth for a 27-leaf channel is ceil(log2(27)) = 5
    full = _build_simple_stage(np.ones((8, 3, 3, 3)))
    assert np.all(full.tree.leaves == 27)
    assert np.all(full.tree.depth == 5)


def test_build_stage_channel_mismatch():
    layer = _stage_layer("conv2d", 3, 2, 4)
    qt = q.QuantTensor(np.ones((4, 2, 3, 3), np.int8), np.float64(1.0))
    bn = q.identity_bn(3)  # wrong channel count
    with pytest.raises(Exception):
        dp.build_stage(layer, qt, bn, q.QParams(0), (8, 8, 2), (8, 8, 4), (0, 255))


def test_stage_cost_formulas():
    # 9 taps of weight 7 (one adder each): 9 scaler adders + 8 tree adders
    stage = _build_simple_stage(np.full((1, 1, 3, 3), 7))
    cost = dp.stage_cost(stage)
    assert cost.adders == 9 * 1 + 8
    assert cost.effective_ops_per_cycle == 2 * 9

    pruned = _build_simple_stage(np.zeros((1, 1, 3, 3)))
    assert dp.stage_cost(pruned).adders == 0
    assert dp.stage_cost(pruned).effective_ops_per_cycle == 0


def test_stage_cost_hamming_reduction():
    # weight 7 needs two digits, weight 8 one: halving digit counts drops adders
    heavy = _build_simple_stage(np.full((1, 1, 3, 3), 7))
    light = _build_simple_stage(np.full((1, 1, 3, 3), 8))
    assert dp.stage_cost(heavy).adders - dp.stage_cost(light).adders == 9


def test_stage_cost_monotone_under_pruning():
    rng = np.random.default_rng(3)
    values = rng.integers(-127, 128, (4, 3, 3, 3))
    base = _build_simple_stage(values)
    mask = rng.random(values.shape) < 0.5
    pruned = _build_simple_stage(np.where(mask, 0, values))
    assert dp.stage_cost(pruned).adders <= dp.stage_cost(base).adders
    assert dp.stage_cost(pruned).effective_ops_per_cycle <= dp.stage_cost(base).effective_ops_per_cycle


def test_single_weight_stage_is_wire_shift():
    stage = _build_simple_stage(np.full((1, 1, 1, 1), 2))
    plans = stage.plans()
    assert len(plans) == 1 and plans[0].adder_count == 0
    assert plans[0].terms.digits == ((1, 1),)
