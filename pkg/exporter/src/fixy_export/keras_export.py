"""Checkpoint export: walks a Keras MobileNet-V1 graph and converts it to the
interchange format, including raw BN statistics.

This module is the only framework-aware code in the toolchain.  TensorFlow is
imported lazily so synthetic export works without it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interchange import InterchangeWriter, LayerRecord

# graph glue with no weights and no effect on the exported chain; anything
# else unmapped is an error, never silently dropped
DEFAULT_SKIP_TYPES = (
    "InputLayer",
    "GlobalAveragePooling2D",
    "Dropout",
    "Reshape",
    "Activation",
    "Softmax",
    "Flatten",
)


class ExportError(Exception):
    pass


class UnsupportedLayersError(ExportError):
    def __init__(self, names):
        super().__init__("unsupported layers: " + ", ".join(names))
        self.names = list(names)


@dataclass
class ExportRecipe:
    checkpoint: str
    arch: str = "mobilenet_v1"
    alpha: float = 1.0
    out_manifest: str = "model.json"
    out_weights: str = "model.bin"
    skip_types: tuple[str, ...] = DEFAULT_SKIP_TYPES
    name_map: dict = field(default_factory=dict)  # keras layer name -> exported id


def _padding_mode(pending_pad, keras_pad, strides, kernel):
    """Fuse an explicit ZeroPadding2D + valid strided conv back into 'same'.

    The framework emits asymmetric (0,1),(0,1) padding before stride-2 convs;
    that is exactly its 'same' convention, which the interchange adopts.
    """
    if keras_pad == "same":
        if pending_pad is not None:
            raise ExportError("explicit padding before a 'same' conv cannot be represented")
        return "same"
    if pending_pad is None:
        return "valid"
    expected = ((0, 1), (0, 1))
    if tuple(map(tuple, pending_pad)) != expected or strides[0] != 2:
        raise ExportError(
            f"explicit padding {pending_pad} with stride {strides} has no interchange equivalent"
        )
    return "same"


def export_model(recipe: ExportRecipe) -> tuple[str, bytes]:
    """Convert a trained checkpoint into (manifest JSON, weight blob).

    The manifest validates against the interchange schema; kernels are
    relaid to [out][in][kh][kw] (depthwise [ch][kh][kw]) and BN is exported
    un-folded as (gamma, beta, mean, var, eps).
    """
    if recipe.arch != "mobilenet_v1":
        raise ExportError(f"unsupported architecture '{recipe.arch}'")
    try:
        import keras
    except ImportError as exc:  # pragma: no cover
        raise ExportError("checkpoint export needs tensorflow/keras installed") from exc

    path = Path(recipe.checkpoint)
    if not path.exists():
        raise ExportError(f"checkpoint not found: {path}")
    net = keras.models.load_model(path, compile=False)

    input_shape = net.input_shape  # (None, H, W, C)
    writer = InterchangeWriter(f"{recipe.arch}-{recipe.alpha}",
                               (input_shape[1], input_shape[2], input_shape[3]))

    records: list[LayerRecord] = []
    unsupported: list[str] = []
    pending_pad = None
    classifier_conv = None
    after_pooling = False
    for layer in net.layers:
        kind = type(layer).__name__
        if kind == "ZeroPadding2D":
            pending_pad = layer.padding
            continue
        if kind in ("GlobalAveragePooling2D", "AveragePooling2D"):
            after_pooling = True
        if kind in recipe.skip_types:
            continue
        if kind == "Conv2D":
            kernel = layer.get_weights()[0]  # (kh, kw, cin, cout)
            kh, kw, cin, cout = kernel.shape
            if after_pooling and (kh, kw) == (1, 1):
                # the classification head: accounted for, never part of the
                # spatial chain
                classifier_conv = cout
                continue
            pad = _padding_mode(pending_pad, layer.padding, layer.strides, (kh, kw))
            pending_pad = None
            records.append(LayerRecord(
                recipe.name_map.get(layer.name, layer.name),
                "pointwise_conv2d" if (kh, kw) == (1, 1) else "conv2d",
                (kh, kw), layer.strides[0], pad, cin, cout,
                kernel_data=np.transpose(kernel, (3, 2, 0, 1)),
                bias_data=layer.get_weights()[1] if layer.use_bias else None,
            ))
        elif kind == "DepthwiseConv2D":
            kernel = layer.get_weights()[0]  # (kh, kw, cin, mult)
            kh, kw, cin, mult = kernel.shape
            if mult != 1:
                unsupported.append(f"{layer.name} (depth multiplier {mult})")
                continue
            pad = _padding_mode(pending_pad, layer.padding, layer.strides, (kh, kw))
            pending_pad = None
            records.append(LayerRecord(
                recipe.name_map.get(layer.name, layer.name),
                "depthwise_conv2d", (kh, kw), layer.strides[0], pad, cin, cin,
                kernel_data=np.transpose(kernel[:, :, :, 0], (2, 0, 1)),
            ))
        elif kind == "BatchNormalization":
            if not records:
                unsupported.append(f"{layer.name} (batch norm before any conv)")
                continue
            gamma, beta, mean, var = layer.get_weights()
            records[-1].bn_data = np.stack([gamma, beta, mean, var]).astype(np.float32)
            records[-1].bn_eps = float(layer.epsilon)
        elif kind == "ReLU":
            # hardware uses an unbounded ReLU; the requantization clamp takes
            # the place of the framework's saturation value
            if records:
                records[-1].relu = True
        elif kind == "MaxPooling2D":
            records.append(LayerRecord(
                recipe.name_map.get(layer.name, layer.name), "maxpool",
                tuple(layer.pool_size), layer.strides[0],
                "same" if layer.padding == "same" else "valid",
                records[-1].out_ch if records else input_shape[3],
                records[-1].out_ch if records else input_shape[3],
            ))
        else:
            unsupported.append(f"{layer.name} ({kind})")
    if unsupported:
        raise UnsupportedLayersError(unsupported)

    expected_first = max(8, int(round(32 * recipe.alpha / 8)) * 8)
    if records and records[0].out_ch != expected_first:
        raise ExportError(
            f"checkpoint width mismatch: first conv has {records[0].out_ch} channels, "
            f"alpha {recipe.alpha} implies {expected_first}"
        )
    for rec in records:
        writer.add_layer(rec)
    if classifier_conv:
        writer.classifier_classes = classifier_conv
    return writer.finish()


def run_export(recipe: ExportRecipe) -> tuple[Path, Path]:
    manifest, blob = export_model(recipe)
    mpath, wpath = Path(recipe.out_manifest), Path(recipe.out_weights)
    mpath.write_text(manifest)
    wpath.write_bytes(blob)
    return mpath, wpath
