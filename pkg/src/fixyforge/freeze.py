"""Builds a FixedPipeline from the fixed part of a model: quantize weights,
prune, fold BN into registers, pick requantization shifts, derive precisions,
plan buffers and schedule the stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .datapath import DatapathStage, PrecisionMap, TreeDescriptor, build_stage, stage_cost
from .errors import ParameterError, UnsupportedOpError
from .line_buffer import StageGeometry, plan_line_buffer, schedule_pipeline
from .model_ir import InputSpec, Layer, ShapedModel
from .quantization import (
    BnRegisters,
    PrunePolicy,
    PruneReport,
    QParams,
    QuantTensor,
    TargetSparsity,
    fold_bn,
    identity_bn,
    prune_model,
    quantize_weights,
    shift_round_half_away,
)
from .simulator import FixedPipeline, stage_accumulate

DEFAULT_SPARSITY = 0.5
CALIBRATION_IMAGES = 64
SATURATION_BUDGET = 1e-3  # <=0.1% of calibration activations may saturate


@dataclass
class FreezeResult:
    pipeline: FixedPipeline
    prune_report: PruneReport
    per_layer_reports: dict[str, dict]


def _smallest_shift(max_value: int, hi: int) -> int:
    """Smallest right shift mapping max_value at or below the clip point."""
    for s in range(32):
        if shift_round_half_away(np.int64(max_value), s) <= hi:
            return s
    return 31


def _shift_from_samples(values: np.ndarray, hi: int) -> int:
    for s in range(32):
        saturating = np.count_nonzero(shift_round_half_away(values, s) > hi)
        if saturating <= SATURATION_BUDGET * values.size:
            return s
    return 31


def build_fixed_pipeline(
    shaped: ShapedModel,
    sparsity: PrunePolicy | float | None = DEFAULT_SPARSITY,
    granularity: str = "per_channel",
    q_mode: str = "static",
    calibration_seed: int = 1,
    calibration_images: int = CALIBRATION_IMAGES,
    name: str | None = None,
    taps: list[int] | None = None,
) -> FreezeResult:
    """Freeze every conv unit of ``shaped`` into a datapath stage chain.

    ``q_mode`` selects how requantization shifts are chosen: 'static' uses
    the analyzed worst-case interval (no saturation possible); 'images' runs
    a seeded calibration batch and picks the smallest shift keeping
    saturation under 0.1% of activations.  ``taps`` lists conv-unit depths
    whose activation stream is exposed as a secondary pipeline output.
    """
    model = shaped.model
    if isinstance(sparsity, (int, float)):
        sparsity = TargetSparsity(float(sparsity)) if sparsity > 0 else None

    conv_layers: list[Layer] = []
    for layer in model.layers:
        if layer.is_conv or layer.kind == "maxpool":
            conv_layers.append(layer)
        elif layer.kind == "relu":
            if not conv_layers:
                raise UnsupportedOpError("relu layer with no preceding conv stage")
            conv_layers[-1] = _with_relu(conv_layers[-1])
        elif layer.kind == "batch_norm":
            raise UnsupportedOpError(
                f"layer {layer.id}: standalone batch_norm must be attached to its conv layer"
            )

    # quantize all conv weights, then prune globally so target_sparsity is
    # a model-wide budget
    quant: dict[str, QuantTensor] = {}
    order: list[str] = []
    for layer in conv_layers:
        if layer.kind == "maxpool":
            continue
        quant[layer.id] = quantize_weights(model.weights[layer.id]["kernel"], granularity)
        order.append(layer.id)
    if sparsity is not None and order:
        pruned, report = prune_model([quant[i] for i in order], sparsity)
        quant = dict(zip(order, pruned))
    else:
        kept = int(sum(np.count_nonzero(quant[i].values) for i in order))
        total = int(sum(quant[i].values.size for i in order))
        report = PruneReport(kept, total - kept, 0, 0)

    shapes = {l.id: s for l, s in zip(model.layers, shaped.layer_shapes)}
    calib = None
    if q_mode == "images" and conv_layers:
        rng = np.random.default_rng(calibration_seed)
        spec = model.input_spec
        calib = rng.integers(0, 256, size=(calibration_images, spec.h, spec.w, spec.c), dtype=np.int64)
    elif q_mode not in ("static", "images"):
        raise ParameterError(f"unknown q_mode '{q_mode}'")

    stages: list[DatapathStage] = []
    buffers = []
    per_layer: dict[str, dict] = {}
    in_range = (0, (1 << model.input_spec.bits) - 1)
    act_scale = 1.0  # real value of one input LSB
    geoms = []
    for layer in conv_layers:
        lshape = shapes[layer.id]
        geom = StageGeometry(layer.kernel, layer.stride, layer.padding,
                             lshape.in_shape[0], lshape.in_shape[1])
        geoms.append(geom)
        buffers.append(plan_line_buffer(layer, lshape.in_shape, model.input_spec.bits))
        if layer.kind == "maxpool":
            stages.append(_pool_stage(layer, lshape, in_range))
            continue

        q = quant[layer.id]
        w_scale = q.scale if q.granularity == "per_channel" else np.full(layer.out_ch, q.scale)
        acc_scale = act_scale * w_scale
        pre_scale = float(np.max(acc_scale))
        store = model.weights[layer.id]
        if layer.has_bn:
            bn = fold_bn(store["gamma"], store["beta"], store["mean"], store["var"],
                         layer.bn_eps, acc_scale=acc_scale, out_scale=pre_scale)
        else:
            bn = fold_bn(np.ones(layer.out_ch), store.get("bias", np.zeros(layer.out_ch)),
                         np.zeros(layer.out_ch), np.ones(layer.out_ch), 0.0,
                         acc_scale=acc_scale, out_scale=pre_scale)
        relu = layer.relu_after
        probe = build_stage(layer, q, bn, QParams(0, output_signed=not relu),
                            lshape.in_shape, lshape.out_shape, in_range, relu=relu,
                            acc_scale=acc_scale, out_scale=pre_scale)
        hi = probe.qparams.hi
        if calib is not None:
            samples = _calibration_preq(probe, calib)
            shift = _shift_from_samples(samples, hi)
        else:
            peak = probe.precision.out_range[1] if relu else max(
                probe.precision.out_range[1], -probe.precision.out_range[0] - 1
            )
            shift = _smallest_shift(max(int(peak), 0), hi)
        qparams = QParams(shift, output_signed=not relu)
        stage = build_stage(layer, q, bn, qparams, lshape.in_shape, lshape.out_shape,
                            in_range, relu=relu, acc_scale=acc_scale,
                            out_scale=pre_scale * (1 << shift))
        stages.append(stage)
        cost = stage_cost(stage)
        per_layer[layer.id] = {
            "kept_weights": stage.kept_weights,
            "total_weights": stage.nominal_macs_per_px,
            "adders": cost.adders,
            "acc_bits": stage.precision.acc_bits,
            "right_shift": shift,
        }
        act_scale = stage.out_scale
        in_range = (qparams.lo, qparams.hi)
        if calib is not None:
            calib = np.stack([_run_int_stage(stage, img) for img in calib])

    spec = model.input_spec
    schedule = schedule_pipeline(geoms, (spec.h, spec.w, spec.c), spec.bits)
    pipe = FixedPipeline(stages=stages, buffers=buffers, schedule=schedule,
                         input_spec=spec, input_range=(0, (1 << spec.bits) - 1),
                         name=name or model.name)
    if taps:
        _apply_taps(pipe, taps)
    return FreezeResult(pipe, report, per_layer)


def _apply_taps(pipe: FixedPipeline, tap_units: list[int]):
    """Expose the outputs of the given conv-unit depths (1-based)."""
    groups = pipe.unit_stage_groups()
    indices = []
    for unit in tap_units:
        if not 1 <= unit <= len(groups):
            raise ParameterError(f"tap depth {unit} out of range 1..{len(groups)}")
        stage_idx = groups[unit - 1][-1]
        indices.append(stage_idx)
        if stage_idx + 1 < len(pipe.buffers):
            pipe.buffers[stage_idx + 1] = dc_replace(pipe.buffers[stage_idx + 1],
                                                     tap_enabled=True)
    pipe.taps = tuple(sorted(set(indices)))


def _with_relu(layer: Layer) -> Layer:
    return dc_replace(layer, relu_after=True)


def _pool_stage(layer: Layer, lshape, in_range) -> DatapathStage:
    c = lshape.in_shape[2]
    dummy_q = QuantTensor(np.zeros((c, 1, 1), np.int8), np.float64(1.0))
    pm = PrecisionMap(
        input_range=in_range,
        product_bits=np.zeros(0, np.int64),
        acc_range=in_range,
        acc_bits=max(int(in_range[1]).bit_length() + 1, 1),
        acc_range_per_ch=np.repeat([[in_range[0], in_range[1]]], c, axis=0),
        bn_product_bits=max(int(in_range[1]).bit_length() + 1, 1),
        out_range=in_range,
        out_bits=max(int(in_range[1]).bit_length() + 1, 1),
    )
    return DatapathStage(
        layer=layer, q_weights=dummy_q, bn=identity_bn(c), relu=False,
        qparams=QParams(0, output_signed=in_range[0] < 0), precision=pm,
        tree=TreeDescriptor(np.zeros(c, np.int64)), in_shape=lshape.in_shape,
        out_shape=lshape.out_shape, acc_scale=np.ones(c), out_scale=1.0,
    )


def _calibration_preq(stage: DatapathStage, batch: np.ndarray) -> np.ndarray:
    """Pre-requantization values of a stage over a calibration batch."""
    outs = []
    for img in batch:
        acc = stage_accumulate(stage, img)
        prod = acc * stage.bn.mant.astype(np.int64)
        val = shift_round_half_away(prod, stage.bn.exp.astype(np.int64)) + stage.bn.bias
        if stage.relu:
            val = np.maximum(val, 0)
        outs.append(val.ravel())
    return np.concatenate(outs)


def _run_int_stage(stage: DatapathStage, img: np.ndarray) -> np.ndarray:
    from .simulator import _run_stage_functional
    return _run_stage_functional(stage, img)


# ---------------------------------------------------------------------------
# Pipeline bundle serialization
# ---------------------------------------------------------------------------

def save_pipeline(pipe: FixedPipeline, out_dir: str | Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stages_meta = []
    arrays: dict[str, np.ndarray] = {}
    for i, stage in enumerate(pipe.stages):
        key = f"s{i:02d}"
        layer = stage.layer
        stages_meta.append({
            "layer": {
                "id": layer.id, "kind": layer.kind, "k": list(layer.kernel),
                "stride": layer.stride, "pad": layer.padding,
                "in_ch": layer.in_ch, "out_ch": layer.out_ch,
                "has_bn": layer.has_bn, "bn_eps": layer.bn_eps,
                "relu": layer.relu_after,
            },
            "in_shape": list(stage.in_shape),
            "out_shape": list(stage.out_shape),
            "relu": stage.relu,
            "right_shift": stage.qparams.right_shift,
            "output_signed": stage.qparams.output_signed,
            "input_range": list(stage.precision.input_range),
            "out_scale": stage.out_scale,
            "granularity": stage.q_weights.granularity,
        })
        arrays[f"{key}_weights"] = stage.q_weights.values
        arrays[f"{key}_wscale"] = np.atleast_1d(np.asarray(stage.q_weights.scale))
        arrays[f"{key}_bn_mant"] = stage.bn.mant
        arrays[f"{key}_bn_exp"] = stage.bn.exp
        arrays[f"{key}_bn_bias"] = stage.bn.bias
        arrays[f"{key}_acc_scale"] = stage.acc_scale
    meta = {
        "name": pipe.name,
        "input": {"h": pipe.input_spec.h, "w": pipe.input_spec.w,
                  "c": pipe.input_spec.c, "bits": pipe.input_spec.bits},
        "input_range": list(pipe.input_range),
        "taps": list(pipe.taps),
        "stages": stages_meta,
    }
    (out_dir / "pipeline.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    np.savez(out_dir / "tensors.npz", **arrays)


def load_pipeline(bundle_dir: str | Path) -> FixedPipeline:
    bundle_dir = Path(bundle_dir)
    meta = json.loads((bundle_dir / "pipeline.json").read_text())
    data = np.load(bundle_dir / "tensors.npz")
    spec = InputSpec(**meta["input"])
    stages = []
    buffers = []
    geoms = []
    for i, sm in enumerate(meta["stages"]):
        key = f"s{i:02d}"
        lm = sm["layer"]
        layer = Layer(
            id=lm["id"], kind=lm["kind"], kernel=tuple(lm["k"]), stride=lm["stride"],
            padding=lm["pad"], in_ch=lm["in_ch"], out_ch=lm["out_ch"],
            has_bn=lm["has_bn"], bn_eps=lm["bn_eps"], relu_after=lm["relu"],
        )
        in_shape = tuple(sm["in_shape"])
        out_shape = tuple(sm["out_shape"])
        geoms.append(StageGeometry(layer.kernel, layer.stride, layer.padding,
                                   in_shape[0], in_shape[1]))
        buffers.append(plan_line_buffer(layer, in_shape, spec.bits))
        if layer.kind == "maxpool":
            from .model_ir import LayerShape
            stages.append(_pool_stage(layer, LayerShape(in_shape, out_shape, 0, 0, 0),
                                      tuple(sm["input_range"])))
            continue
        wscale = data[f"{key}_wscale"]
        granularity = sm["granularity"]
        q = QuantTensor(data[f"{key}_weights"],
                        wscale if granularity == "per_channel" else np.float64(wscale[0]),
                        granularity)
        bn = BnRegisters(mant=data[f"{key}_bn_mant"], exp=data[f"{key}_bn_exp"],
                         bias=data[f"{key}_bn_bias"])
        qparams = QParams(sm["right_shift"], output_signed=sm["output_signed"])
        stages.append(build_stage(layer, q, bn, qparams, in_shape, out_shape,
                                  tuple(sm["input_range"]), relu=sm["relu"],
                                  acc_scale=data[f"{key}_acc_scale"],
                                  out_scale=sm["out_scale"]))
    schedule = schedule_pipeline(geoms, (spec.h, spec.w, spec.c), spec.bits)
    pipe = FixedPipeline(stages=stages, buffers=buffers, schedule=schedule,
                         input_spec=spec, input_range=tuple(meta["input_range"]),
                         name=meta["name"], taps=tuple(meta.get("taps", ())))
    for idx in pipe.taps:
        if idx + 1 < len(pipe.buffers):
            pipe.buffers[idx + 1] = dc_replace(pipe.buffers[idx + 1], tap_enabled=True)
    return pipe
