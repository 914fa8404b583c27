"""Neutral model interchange format: parsing, validation, shape inference,
reference MobileNet builder and fixed/programmable model splitting.

Models are simple layer chains. Weights travel as a JSON manifest plus a raw
little-endian float32 blob; see ``parse_model`` / ``serialize_model``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    IntegrityError,
    ParameterError,
    SchemaError,
    ShapeError,
    UnsupportedOpError,
)

CONV_KINDS = ("conv2d", "depthwise_conv2d", "pointwise_conv2d")
LAYER_KINDS = CONV_KINDS + ("batch_norm", "relu", "maxpool")

# Channel counts of the width-1.0 reference model: first full conv, then 13
# depthwise-separable blocks.  Stride-2 blocks at the standard positions.
_MOBILENET_CHANNELS = [32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024]
_MOBILENET_DW_STRIDES = [1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1]

SUPPORTED_ALPHAS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class InputSpec:
    h: int
    w: int
    c: int
    bits: int = 8


@dataclass(frozen=True)
class Layer:
    id: str
    kind: str
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: str = "same"
    in_ch: int = 0
    out_ch: int = 0
    has_bn: bool = False
    bn_eps: float = 0.0
    relu_after: bool = False

    @property
    def is_conv(self) -> bool:
        return self.kind in CONV_KINDS

    def kernel_size(self) -> int:
        """Number of kernel weights this layer stores."""
        kh, kw = self.kernel
        if self.kind == "conv2d":
            return kh * kw * self.in_ch * self.out_ch
        if self.kind == "depthwise_conv2d":
            return kh * kw * self.in_ch
        if self.kind == "pointwise_conv2d":
            return self.in_ch * self.out_ch
        return 0


@dataclass
class Model:
    """A validated layer chain plus its weight store.

    ``weights[layer_id]`` maps tensor names ('kernel', 'bias', 'gamma',
    'beta', 'mean', 'var') to float32 arrays.  ``classifier_classes`` is an
    accounting-only record of the classifier head that follows the chain in
    the source network; the head itself is never part of the chain.
    """

    name: str
    input_spec: InputSpec
    layers: list[Layer]
    weights: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    classifier_classes: int = 0

    def layer(self, layer_id: str) -> Layer:
        for lyr in self.layers:
            if lyr.id == layer_id:
                return lyr
        raise KeyError(layer_id)

    def conv_units(self) -> list[list[Layer]]:
        """Group the chain into countable conv units.

        A depthwise conv immediately followed by a pointwise conv forms one
        unit (the depthwise-separable pair); any other conv stands alone.
        Non-conv layers attach to the preceding unit.
        """
        units: list[list[Layer]] = []
        i = 0
        n = len(self.layers)
        while i < n:
            lyr = self.layers[i]
            if lyr.is_conv:
                unit = [lyr]
                i += 1
                if (
                    lyr.kind == "depthwise_conv2d"
                    and i < n
                    and self.layers[i].kind == "pointwise_conv2d"
                ):
                    unit.append(self.layers[i])
                    i += 1
                while i < n and not self.layers[i].is_conv:
                    unit.append(self.layers[i])
                    i += 1
                units.append(unit)
            else:
                # leading non-conv layers form their own unit
                unit = [lyr]
                i += 1
                while i < n and not self.layers[i].is_conv:
                    unit.append(self.layers[i])
                    i += 1
                units.append(unit)
        return units

    @property
    def conv_unit_count(self) -> int:
        return sum(1 for u in self.conv_units() if u[0].is_conv)


@dataclass(frozen=True)
class LayerShape:
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    macs: int
    bn_macs: int
    params: int


@dataclass
class ShapedModel:
    """Model with per-layer activation shapes and exact work/storage counts.

    ``conv_macs`` counts one MAC per multiply in conv-kind layers.
    ``bn_macs`` counts one scale-and-shift op per normalized activation.
    ``mac_count`` / ``param_count`` include the classifier-head accounting so
    they line up with whole-network figures quoted for these models.
    """

    model: Model
    layer_shapes: list[LayerShape]
    conv_macs: int
    bn_macs: int
    graph_params: int
    head_macs: int
    head_params: int

    @property
    def mac_count(self) -> int:
        return self.conv_macs + self.head_macs

    @property
    def param_count(self) -> int:
        return self.graph_params + self.head_params

    @property
    def output_shape(self) -> tuple[int, int, int]:
        if not self.layer_shapes:
            spec = self.model.input_spec
            return (spec.h, spec.w, spec.c)
        return self.layer_shapes[-1].out_shape

    def unit_conv_macs(self) -> list[int]:
        """Conv MACs per countable conv unit, in chain order."""
        by_id = {l.id: s for l, s in zip(self.model.layers, self.layer_shapes)}
        totals = []
        for unit in self.model.conv_units():
            if not unit[0].is_conv:
                continue
            totals.append(sum(by_id[l.id].macs for l in unit if l.is_conv))
        return totals

    def unit_bn_macs(self) -> list[int]:
        by_id = {l.id: s for l, s in zip(self.model.layers, self.layer_shapes)}
        totals = []
        for unit in self.model.conv_units():
            if not unit[0].is_conv:
                continue
            totals.append(sum(by_id[l.id].bn_macs for l in unit))
        return totals


@dataclass
class ModelSplit:
    fixed_part: ShapedModel
    programmable_part: ShapedModel
    split_index: int
    fixed_macs: int
    programmable_macs: int
    fixed_ops_fraction: float


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) padding so that out = ceil(size / stride).

    Matches the convention of mainstream frameworks: the total pad is split
    with the extra pixel after, so strided layers align with exported models.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before


def out_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - kernel) // stride + 1


def _layer_out_shape(layer: Layer, shape: tuple[int, int, int]) -> tuple[int, int, int]:
    h, w, c = shape
    if layer.kind in ("batch_norm", "relu"):
        return shape
    kh, kw = layer.kernel
    if layer.padding == "valid" and (h < kh or w < kw):
        raise ShapeError(f"layer {layer.id}: kernel {layer.kernel} larger than input {h}x{w}")
    ho = out_size(h, kh, layer.stride, layer.padding)
    wo = out_size(w, kw, layer.stride, layer.padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"layer {layer.id}: non-positive output {ho}x{wo}")
    co = c if layer.kind == "maxpool" else layer.out_ch
    return (ho, wo, co)


def _layer_param_count(layer: Layer) -> int:
    if not layer.is_conv:
        return 0
    params = layer.kernel_size()
    if layer.has_bn:
        params += 4 * layer.out_ch  # gamma, beta, mean, var
    else:
        params += layer.out_ch  # bias (implicit zeros when not stored)
    return params


def infer_shapes(model: Model, input_shape: tuple[int, int, int] | None = None) -> ShapedModel:
    """Propagate shapes through the chain and count work exactly."""
    if input_shape is None:
        spec = model.input_spec
        input_shape = (spec.h, spec.w, spec.c)
    shapes: list[LayerShape] = []
    cur = input_shape
    conv_macs = bn_macs = params = 0
    for layer in model.layers:
        if layer.is_conv and layer.in_ch != cur[2]:
            raise ShapeError(
                f"layer {layer.id}: expects {layer.in_ch} channels, got {cur[2]}"
            )
        out = _layer_out_shape(layer, cur)
        ho, wo, _ = out
        kh, kw = layer.kernel
        if layer.kind == "conv2d":
            macs = ho * wo * kh * kw * layer.in_ch * layer.out_ch
        elif layer.kind == "depthwise_conv2d":
            macs = ho * wo * kh * kw * layer.in_ch
        elif layer.kind == "pointwise_conv2d":
            macs = ho * wo * layer.in_ch * layer.out_ch
        else:
            macs = 0
        bn = ho * wo * out[2] if (layer.has_bn or layer.kind == "batch_norm") else 0
        p = _layer_param_count(layer)
        shapes.append(LayerShape(cur, out, macs, bn, p))
        conv_macs += macs
        bn_macs += bn
        params += p
        cur = out
    head_macs = head_params = 0
    if model.classifier_classes and shapes:
        last_c = shapes[-1].out_shape[2]
        head_macs = last_c * model.classifier_classes
        head_params = last_c * model.classifier_classes + model.classifier_classes
    return ShapedModel(model, shapes, conv_macs, bn_macs, params, head_macs, head_params)


def count_ops_params(shaped: ShapedModel) -> tuple[int, int]:
    """Whole-network (MACs, params) readback, classifier head included."""
    return shaped.mac_count, shaped.param_count


# ---------------------------------------------------------------------------
# Interchange format
# ---------------------------------------------------------------------------

_BLOB_DTYPE = np.dtype("<f4")


def _require(cond: bool, msg: str):
    if not cond:
        raise SchemaError(msg)


def _tensor_slots(entry: dict, layer: Layer) -> list[tuple[str, int, int]]:
    """(name, byte offset, element count) for every tensor a manifest layer declares."""
    slots = []
    w = entry.get("weights")
    if layer.is_conv:
        _require(isinstance(w, dict), f"layer {layer.id}: missing 'weights' field")
        slots.append(("kernel", w["offset"], w["count"]))
        bias = entry.get("bias")
        if bias is not None:
            slots.append(("bias", bias["offset"], bias["count"]))
        bn = entry.get("bn")
        if bn is not None:
            slots.append(("bn", bn["offset"], bn["count"]))
    return slots


def parse_model(manifest_text: str, weights_blob: bytes) -> Model:
    """Parse and validate a manifest + blob pair into a Model."""
    try:
        doc = json.loads(manifest_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest is not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "manifest root must be an object")
    for key in ("name", "input", "layers"):
        _require(key in doc, f"manifest missing required field '{key}'")
    inp = doc["input"]
    for key in ("h", "w", "c", "bits"):
        _require(isinstance(inp.get(key), int) and inp[key] > 0, f"input.{key} must be a positive int")
    spec = InputSpec(inp["h"], inp["w"], inp["c"], inp["bits"])

    layers: list[Layer] = []
    entries = doc["layers"]
    _require(isinstance(entries, list), "'layers' must be a list")
    seen_ids = set()
    for idx, entry in enumerate(entries):
        _require(isinstance(entry, dict), f"layers[{idx}] must be an object")
        for key in ("id", "kind"):
            _require(key in entry, f"layers[{idx}] missing '{key}'")
        kind = entry["kind"]
        if kind not in LAYER_KINDS:
            raise UnsupportedOpError(f"layers[{idx}]: unsupported layer kind '{kind}'")
        lid = entry["id"]
        _require(isinstance(lid, str) and lid, f"layers[{idx}].id must be a non-empty string")
        _require(lid not in seen_ids, f"duplicate layer id '{lid}'")
        seen_ids.add(lid)
        k = tuple(entry.get("k", [1, 1]))
        _require(len(k) == 2 and all(isinstance(x, int) and x > 0 for x in k), f"layer {lid}: bad 'k'")
        stride = entry.get("stride", 1)
        _require(isinstance(stride, int) and stride >= 1, f"layer {lid}: bad 'stride'")
        pad = entry.get("pad", "same")
        _require(pad in ("same", "valid"), f"layer {lid}: bad 'pad'")
        in_ch = entry.get("in_ch", 0)
        out_ch = entry.get("out_ch", in_ch)
        if kind == "pointwise_conv2d":
            _require(k == (1, 1), f"layer {lid}: pointwise kernel must be 1x1")
        if kind == "depthwise_conv2d":
            _require(out_ch == in_ch, f"layer {lid}: depthwise requires out_ch == in_ch")
        bn = entry.get("bn")
        layers.append(
            Layer(
                id=lid,
                kind=kind,
                kernel=(k[0], k[1]),
                stride=stride,
                padding=pad,
                in_ch=in_ch,
                out_ch=out_ch if kind != "maxpool" else in_ch,
                has_bn=bn is not None,
                bn_eps=float(bn.get("eps", 1e-3)) if bn is not None else 0.0,
                relu_after=bool(entry.get("relu", False)),
            )
        )

    # blob integrity: declared segments must tile the blob exactly
    segments = []
    for entry, layer in zip(entries, layers):
        for name, off, count in _tensor_slots(entry, layer):
            _require(isinstance(off, int) and off >= 0, f"layer {layer.id}.{name}: bad offset")
            _require(isinstance(count, int) and count > 0, f"layer {layer.id}.{name}: bad count")
            _require(off % _BLOB_DTYPE.itemsize == 0, f"layer {layer.id}.{name}: offset not float-aligned")
            segments.append((off, count * _BLOB_DTYPE.itemsize, layer.id, name))
    declared = sum(nbytes for _, nbytes, _, _ in segments)
    if declared != len(weights_blob):
        raise IntegrityError(
            f"weight blob holds {len(weights_blob)} bytes but manifest declares {declared}"
        )
    pos = 0
    for off, nbytes, lid, name in sorted(segments):
        if off != pos:
            raise IntegrityError(f"tensor {lid}.{name} at offset {off} leaves a gap/overlap at {pos}")
        pos += nbytes

    weights: dict[str, dict[str, np.ndarray]] = {}
    for entry, layer in zip(entries, layers):
        store: dict[str, np.ndarray] = {}
        for name, off, count in _tensor_slots(entry, layer):
            flat = np.frombuffer(weights_blob, dtype=_BLOB_DTYPE, count=count, offset=off)
            flat = flat.astype(np.float32)
            if name == "kernel":
                shape = _kernel_shape(layer)
                if math.prod(shape) != count:
                    raise IntegrityError(
                        f"layer {layer.id}: kernel declares {count} values, shape {shape} needs {math.prod(shape)}"
                    )
                store["kernel"] = flat.reshape(shape)
            elif name == "bias":
                if count != layer.out_ch:
                    raise IntegrityError(f"layer {layer.id}: bias count {count} != out_ch {layer.out_ch}")
                store["bias"] = flat
            elif name == "bn":
                if count != 4 * layer.out_ch:
                    raise IntegrityError(
                        f"layer {layer.id}: bn count {count} != 4*out_ch {4 * layer.out_ch}"
                    )
                g, b, m, v = flat.reshape(4, layer.out_ch)
                store.update(gamma=g, beta=b, mean=m, var=v)
        if layer.is_conv and "bias" not in store and not layer.has_bn:
            store["bias"] = np.zeros(layer.out_ch, dtype=np.float32)
        if store:
            weights[layer.id] = store

    classes = 0
    clf = doc.get("classifier")
    if clf is not None:
        _require(isinstance(clf.get("classes"), int) and clf["classes"] > 0, "classifier.classes must be a positive int")
        classes = clf["classes"]
    model = Model(doc["name"], spec, layers, weights, classes)
    if model.layers and model.layers[0].is_conv and model.layers[0].in_ch != spec.c:
        raise SchemaError(
            f"first layer consumes {model.layers[0].in_ch} channels but input declares {spec.c}"
        )
    return model


def _kernel_shape(layer: Layer) -> tuple[int, ...]:
    kh, kw = layer.kernel
    if layer.kind == "conv2d":
        return (layer.out_ch, layer.in_ch, kh, kw)
    if layer.kind == "depthwise_conv2d":
        return (layer.in_ch, kh, kw)
    if layer.kind == "pointwise_conv2d":
        return (layer.out_ch, layer.in_ch, 1, 1)
    return ()


def serialize_model(model: Model) -> tuple[str, bytes]:
    """Inverse of parse_model: emit (manifest JSON, weight blob)."""
    entries = []
    chunks: list[bytes] = []
    offset = 0

    def push(arr: np.ndarray) -> tuple[int, int]:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=_BLOB_DTYPE).tobytes()
        chunks.append(raw)
        off = offset
        offset += len(raw)
        return off, arr.size

    for layer in model.layers:
        entry: dict = {
            "id": layer.id,
            "kind": layer.kind,
            "k": list(layer.kernel),
            "stride": layer.stride,
            "pad": layer.padding,
            "in_ch": layer.in_ch,
            "out_ch": layer.out_ch,
        }
        if layer.relu_after:
            entry["relu"] = True
        store = model.weights.get(layer.id, {})
        if layer.is_conv:
            off, count = push(store["kernel"])
            entry["weights"] = {"offset": off, "count": count}
            if layer.has_bn:
                bn = np.stack([store["gamma"], store["beta"], store["mean"], store["var"]])
                off, count = push(bn)
                entry["bn"] = {"offset": off, "count": count, "eps": layer.bn_eps}
            elif "bias" in store and np.any(store["bias"]):
                off, count = push(store["bias"])
                entry["bias"] = {"offset": off, "count": count}
        entries.append(entry)

    doc = {
        "name": model.name,
        "input": {
            "h": model.input_spec.h,
            "w": model.input_spec.w,
            "c": model.input_spec.c,
            "bits": model.input_spec.bits,
        },
        "layers": entries,
    }
    if model.classifier_classes:
        doc["classifier"] = {"classes": model.classifier_classes}
    return json.dumps(doc, indent=1, sort_keys=True), b"".join(chunks)


# ---------------------------------------------------------------------------
# Reference model builder
# ---------------------------------------------------------------------------

def _scaled_channels(alpha: float) -> list[int]:
    # round to the nearest multiple of 8, never below 8, to keep datapaths
    # byte-aligned after width scaling
    return [max(8, int(round(c * alpha / 8)) * 8) for c in _MOBILENET_CHANNELS]


def build_mobilenet(
    alpha: float,
    input_shape: tuple[int, int, int] = (224, 224, 3),
    weight_source: str = "random",
    seed: int = 1,
    blob: bytes | None = None,
    classes: int = 1000,
) -> Model:
    """Build the standard 14-conv-unit mobile CNN at width multiplier alpha.

    ``weight_source`` is 'random' (seeded) or 'blob' (weights read from a
    serialized blob laid out exactly as serialize_model writes them).
    """
    if alpha not in SUPPORTED_ALPHAS:
        raise ParameterError(f"unsupported width multiplier {alpha}; pick one of {SUPPORTED_ALPHAS}")
    if weight_source not in ("random", "blob"):
        raise ParameterError(f"unknown weight_source '{weight_source}'")
    h, w, c = input_shape
    chans = _scaled_channels(alpha)
    layers = [
        Layer("conv1", "conv2d", (3, 3), 2, "same", c, chans[0], has_bn=True, bn_eps=1e-3, relu_after=True)
    ]
    cin = chans[0]
    for i, stride in enumerate(_MOBILENET_DW_STRIDES):
        blk = i + 1
        layers.append(
            Layer(f"dw{blk}", "depthwise_conv2d", (3, 3), stride, "same", cin, cin, has_bn=True, bn_eps=1e-3, relu_after=True)
        )
        layers.append(
            Layer(f"pw{blk}", "pointwise_conv2d", (1, 1), 1, "same", cin, chans[i + 1], has_bn=True, bn_eps=1e-3, relu_after=True)
        )
        cin = chans[i + 1]
    model = Model(f"mobilenet-{alpha}", InputSpec(h, w, c, 8), layers, {}, classes)
    if weight_source == "random":
        rng = np.random.default_rng(seed)
        for layer in layers:
            shape = _kernel_shape(layer)
            fan_in = layer.kernel[0] * layer.kernel[1] * (1 if layer.kind == "depthwise_conv2d" else layer.in_ch)
            kernel = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(np.float32)
            store = {
                "kernel": kernel,
                "gamma": rng.uniform(0.5, 1.5, layer.out_ch).astype(np.float32),
                "beta": rng.normal(0.0, 0.3, layer.out_ch).astype(np.float32),
                "mean": rng.normal(0.0, 0.5, layer.out_ch).astype(np.float32),
                "var": rng.uniform(0.25, 2.0, layer.out_ch).astype(np.float32),
            }
            model.weights[layer.id] = store
    else:
        if blob is None:
            raise ParameterError("weight_source='blob' needs the serialized weight blob")
        manifest, _ = serialize_model(_with_zero_weights(model))
        parsed = parse_model(manifest, blob)
        model.weights = parsed.weights
    return model


def _with_zero_weights(model: Model) -> Model:
    out = replace(model)
    out.weights = {}
    for layer in model.layers:
        if layer.is_conv:
            store = {"kernel": np.zeros(_kernel_shape(layer), dtype=np.float32)}
            if layer.has_bn:
                store.update(
                    gamma=np.ones(layer.out_ch, np.float32),
                    beta=np.zeros(layer.out_ch, np.float32),
                    mean=np.zeros(layer.out_ch, np.float32),
                    var=np.ones(layer.out_ch, np.float32),
                )
            out.weights[layer.id] = store
    return out


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _slice_model(shaped: ShapedModel, layers: list[Layer], name_suffix: str,
                 input_shape: tuple[int, int, int], keep_head: bool) -> ShapedModel:
    model = shaped.model
    ids = {l.id for l in layers}
    part = Model(
        model.name + name_suffix,
        InputSpec(input_shape[0], input_shape[1], input_shape[2], model.input_spec.bits),
        layers,
        {k: v for k, v in model.weights.items() if k in ids},
        model.classifier_classes if keep_head else 0,
    )
    return infer_shapes(part, input_shape)


def split_model(shaped: ShapedModel, n_fixed: int, adaptive_bn: bool = True) -> ModelSplit:
    """Split after the n_fixed-th conv unit.

    ``fixed_ops_fraction`` counts the fixed units' conv MACs against the
    whole chain's conv + BN ops.  With ``adaptive_bn`` (the default) the BN
    ops of the fixed part stay on the programmable side, since per-channel
    scale/bias registers remain retrainable; with ``adaptive_bn=False`` the
    fixed part's BN ops count as fixed as well.
    """
    units = shaped.model.conv_units()
    conv_units = [u for u in units if u[0].is_conv]
    if not 0 <= n_fixed <= len(conv_units):
        raise ParameterError(f"n_fixed={n_fixed} out of range 0..{len(conv_units)}")
    fixed_layers: list[Layer] = []
    taken = 0
    split_at = 0
    for unit in units:
        if taken == n_fixed:
            break
        fixed_layers.extend(unit)
        split_at += len(unit)
        if unit[0].is_conv:
            taken += 1
    prog_layers = shaped.model.layers[split_at:]

    spec = shaped.model.input_spec
    in_shape = (spec.h, spec.w, spec.c)
    fixed = _slice_model(shaped, fixed_layers, "-fixed", in_shape, keep_head=False)
    boundary = fixed.output_shape if fixed_layers else in_shape
    prog = _slice_model(shaped, prog_layers, "-programmable", boundary, keep_head=True)

    total_ops = shaped.conv_macs + shaped.bn_macs
    fixed_ops = fixed.conv_macs + (fixed.bn_macs if not adaptive_bn else 0)
    fraction = fixed_ops / total_ops if total_ops else 0.0
    return ModelSplit(
        fixed_part=fixed,
        programmable_part=prog,
        split_index=n_fixed,
        fixed_macs=fixed.conv_macs,
        programmable_macs=shaped.conv_macs - fixed.conv_macs,
        fixed_ops_fraction=fraction,
    )
