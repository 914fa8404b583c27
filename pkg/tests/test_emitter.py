import json
from pathlib import Path

import numpy as np
import pytest

from conftest import make_chain_model, random_small_pipeline
from fixyforge import model_ir as mir
from fixyforge.datapath import stage_cost
from fixyforge.emitter import count_arith_operators, emit_testbench, emit_verilog
from fixyforge.errors import EmissionError
from fixyforge.freeze import build_fixed_pipeline
from fixyforge.simulator import run_fixed

GOLDEN = Path(__file__).parent / "data" / "golden_stage.v"


def _pipeline(specs, shape=(10, 10, 2), seed=0, sparsity=0.4):
    model = make_chain_model("em", shape, specs, seed=seed)
    shaped = mir.infer_shapes(model)
    return build_fixed_pipeline(shaped, sparsity=sparsity).pipeline


def test_emission_deterministic():
    pipe = _pipeline([("conv2d", 3, 2, 4), ("pointwise_conv2d", 1, 1, 3)])
    rng = np.random.default_rng(0)
    imgs = [rng.integers(0, 256, (10, 10, 2), np.int64)]
    a = emit_testbench(pipe, imgs)
    b = emit_testbench(pipe, imgs)
    assert a.files == b.files
    assert a.vectors == b.vectors
    assert a.manifest == b.manifest


def test_operator_audit_matches_stage_cost():
    rng = np.random.default_rng(41)
    for _ in range(10):
        pipe, _ = random_small_pipeline(rng)
        bundle = emit_verilog(pipe)
        for meta, stage in zip(bundle.manifest["stages"], pipe.stages):
            if stage.is_pool:
                continue
            text = bundle.files[f"rtl/{meta['name']}.v"]
            assert count_arith_operators(text, f"{meta['name']}_acc") == stage_cost(stage).adders


def test_no_weight_memories():
    pipe = _pipeline([("conv2d", 3, 1, 4)])
    bundle = emit_testbench(pipe, [np.zeros((10, 10, 2), np.int64)])
    for text in bundle.files.values():
        assert "$readmem" not in text


def test_pruned_taps_emit_nothing():
    values = np.ones((1, 1, 3, 3), np.float32)
    values[0, 0, 1, 1] = 0.0  # the center tap is pruned
    model = make_chain_model("pz", (8, 8, 1), [("conv2d", 3, 1, 1)], seed=1)
    model.weights["l0_conv2d"]["kernel"] = values
    pipe = build_fixed_pipeline(mir.infer_shapes(model), sparsity=None).pipeline
    bundle = emit_verilog(pipe)
    name = bundle.manifest["stages"][0]["name"]
    text = bundle.files[f"rtl/{name}.v"]
    # window tap 4 (center, single channel) must have no operand wire
    assert "xs4" not in text
    assert "xs0" in text


def test_wire_shift_stage():
    # quantized weight 2 compiles to a bare left shift, no adders
    from fixyforge import quantization as q
    from fixyforge.datapath import build_stage
    from fixyforge.line_buffer import StageGeometry, plan_line_buffer, schedule_pipeline
    from fixyforge.simulator import FixedPipeline

    layer = mir.Layer("p", "pointwise_conv2d", (1, 1), 1, "same", 1, 1, relu_after=True)
    qt = q.QuantTensor(np.array([[[[2]]]], np.int8), np.float64(1.0))
    stage = build_stage(layer, qt, q.identity_bn(1), q.QParams(0), (4, 4, 1), (4, 4, 1), (0, 255))
    pipe = FixedPipeline(
        stages=[stage], buffers=[plan_line_buffer(layer, (4, 4, 1), 8)],
        schedule=schedule_pipeline([StageGeometry((1, 1), 1, "same", 4, 4)], (4, 4, 1)),
        input_spec=mir.InputSpec(4, 4, 1), name="ws",
    )
    bundle = emit_verilog(pipe)
    text = bundle.files["rtl/stage00_p.v"]
    assert "(xs0 <<< 1)" in text  # weight 2 is one left shift
    assert count_arith_operators(text, "stage00_p_acc") == 0


def test_golden_snapshot():
    model = make_chain_model("golden", (6, 6, 1), [("conv2d", 3, 1, 2)], seed=99)
    pipe = build_fixed_pipeline(mir.infer_shapes(model), sparsity=0.3).pipeline
    bundle = emit_verilog(pipe)
    name = bundle.manifest["stages"][0]["name"]
    assert bundle.files[f"rtl/{name}.v"] == GOLDEN.read_text()


def test_vectors_are_simulator_outputs():
    pipe = _pipeline([("conv2d", 3, 2, 3)])
    rng = np.random.default_rng(2)
    imgs = [rng.integers(0, 256, (10, 10, 2), np.int64) for _ in range(3)]
    bundle = emit_testbench(pipe, imgs)
    assert len(bundle.vectors) == 6
    for i, img in enumerate(imgs):
        want = run_fixed(pipe, img).output.tobytes()
        assert bundle.vectors[f"vectors/expected_{i:03d}.bin"] == want
        assert bundle.vectors[f"vectors/stim_{i:03d}.bin"] == img.astype(np.uint8).tobytes()


def test_testbench_requires_images():
    pipe = _pipeline([("conv2d", 3, 1, 2)])
    with pytest.raises(EmissionError):
        emit_testbench(pipe, [])


def test_bundle_write_and_manifest(tmp_path):
    pipe = _pipeline([("conv2d", 3, 1, 2), ("pointwise_conv2d", 1, 1, 2)])
    bundle = emit_testbench(pipe, [np.zeros((10, 10, 2), np.int64)])
    bundle.write(tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for rel in manifest["files"]:
        assert (tmp_path / rel).is_file(), rel
    for rel in manifest["vectors"]:
        assert (tmp_path / rel).is_file(), rel
    assert manifest["top"].endswith("_top")
    assert (tmp_path / "tb" / "tb_top.v").exists()


def test_tap_points_exposed(tmp_path):
    model = make_chain_model("tap", (12, 12, 2),
                             [("conv2d", 3, 2, 4), ("depthwise_conv2d", 3, 1, 4),
                              ("pointwise_conv2d", 1, 1, 4)], seed=21)
    shaped = mir.infer_shapes(model)
    from fixyforge.freeze import load_pipeline, save_pipeline
    result = build_fixed_pipeline(shaped, sparsity=None, taps=[1])
    pipe = result.pipeline
    assert pipe.taps == (0,)  # unit 1 is the standalone conv stage
    assert pipe.buffers[1].tap_enabled
    save_pipeline(pipe, tmp_path / "p")
    reloaded = load_pipeline(tmp_path / "p")
    assert reloaded.taps == (0,)
    bundle = emit_verilog(reloaded)
    top = bundle.files[f"rtl/{bundle.manifest['top']}.v"]
    assert "output wire tap0_valid" in top
    assert "assign tap0_px" in top


# ---------------------------------------------------------------------------
# Emitted-expression semantics: the accumulation modules use a closed grammar
# (tap wires, <<<, binary +/-, unary negation, parenthesis, zero literals),
# so the RTL text itself can be executed against the bit-exact simulator.
# ---------------------------------------------------------------------------

import re

from fixyforge.simulator import padded_windows, stage_accumulate, stage_postprocess


def _eval_emitted_acc(text, module, win_flat):
    """Evaluate every channel's emitted accumulator expression on one window
    (win_flat indexed by tap, channel-innermost layout)."""
    body = re.search(rf"module {module} \(.*?endmodule", text, re.S).group(0)
    taps = {f"xs{t}": int(v) for t, v in enumerate(win_flat)}
    out = {}
    for m in re.finditer(r"assign acc\[(\d+):(\d+)\] = (.*?);", body):
        msb, lsb, expr = int(m.group(1)), int(m.group(2)), m.group(3)
        expr = expr.replace("<<<", "<<")
        expr = re.sub(r"\d+'sd(\d+)", r"\1", expr)
        acc_bits = msb - lsb + 1
        channel = lsb // acc_bits
        out[channel] = eval(expr, {"__builtins__": {}}, taps)  # closed grammar
    return out


@pytest.mark.parametrize("specs,signed_first", [
    ([("conv2d", 3, 1, 5)], False),
    ([("depthwise_conv2d", 3, 1, 3)], False),
    ([("pointwise_conv2d", 1, 1, 4)], False),
    ([("conv2d", 3, 2, 4), ("pointwise_conv2d", 1, 1, 3)], True),
])
def test_emitted_acc_matches_simulator(specs, signed_first):
    model = make_chain_model("sem", (8, 8, 3), specs, seed=33)
    if signed_first:
        model.layers[0] = mir.Layer(**{**model.layers[0].__dict__, "relu_after": False})
    shaped = mir.infer_shapes(model)
    pipe = build_fixed_pipeline(shaped, sparsity=0.4).pipeline
    bundle = emit_verilog(pipe)
    rng = np.random.default_rng(34)
    x = rng.integers(0, 256, (8, 8, 3), np.int64)
    for stage, meta in zip(pipe.stages, bundle.manifest["stages"]):
        lo, hi = stage.precision.input_range
        kh, kw = stage.layer.kernel
        cin = stage.layer.in_ch
        acc_want = stage_accumulate(stage, x)  # (H', W', C)
        if stage.layer.kind == "pointwise_conv2d":
            wins = x.reshape(-1, cin)
        else:
            w4 = padded_windows(x, stage.layer.kernel, stage.layer.stride, stage.layer.padding)
            # window vector layout is (i, j, c) channel-innermost
            wins = np.moveaxis(w4, 2, 4).reshape(-1, kh * kw * cin)
        text = bundle.files[f"rtl/{meta['name']}.v"]
        flat_want = acc_want.reshape(-1, acc_want.shape[-1])
        for px in range(0, wins.shape[0], max(1, wins.shape[0] // 7)):
            got = _eval_emitted_acc(text, f"{meta['name']}_acc", wins[px])
            for ch, value in got.items():
                assert value == flat_want[px, ch], (meta["name"], px, ch)
        # feed the emitted next stage the simulated activations
        x = np.asarray(stage_postprocess(stage, acc_want), dtype=np.int64)


def test_small_accumulator_stage_emits_legal_widths():
    # a signed single-tap unit-weight stage has an 8-bit accumulator: the tap
    # operand needs no extension bits and the bias extension stays positive
    from fixyforge import quantization as q
    from fixyforge.datapath import build_stage
    from fixyforge.line_buffer import StageGeometry, plan_line_buffer, schedule_pipeline
    from fixyforge.simulator import FixedPipeline

    layer = mir.Layer("u", "pointwise_conv2d", (1, 1), 1, "same", 1, 1)
    qt = q.QuantTensor(np.array([[[[1]]]], np.int8), np.float64(1.0))
    stage = build_stage(layer, qt, q.identity_bn(1), q.QParams(0, output_signed=True),
                        (4, 4, 1), (4, 4, 1), (-128, 127), relu=False)
    assert stage.precision.acc_bits == 8
    pipe = FixedPipeline(
        stages=[stage], buffers=[plan_line_buffer(layer, (4, 4, 1), 8)],
        schedule=schedule_pipeline([StageGeometry((1, 1), 1, "same", 4, 4)], (4, 4, 1)),
        input_spec=mir.InputSpec(4, 4, 1), name="unit", input_range=(-128, 127),
    )
    text = emit_verilog(pipe).files["rtl/stage00_u.v"]
    assert "wire signed [7:0] xs0 = {win[7:0]};" in text
    assert re.search(r"\{\{0\{", text) is None      # no zero replication
    assert re.search(r"\{\{-\d+\{", text) is None   # no negative replication
