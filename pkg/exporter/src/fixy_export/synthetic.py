"""Seeded synthetic model generation: the standard MobileNet-V1 topology with
random weights, written straight to the interchange format.  Needs no ML
framework, so downstream tooling can be exercised anywhere.
"""

from __future__ import annotations

import math

import numpy as np

from .interchange import InterchangeWriter, LayerRecord

CHANNELS = [32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024]
DW_STRIDES = [1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1]
SUPPORTED_ALPHAS = (0.25, 0.5, 0.75, 1.0)


def export_synthetic(alpha: float, seed: int, input_hw: tuple[int, int] = (224, 224),
                     classes: int = 1000) -> tuple[str, bytes]:
    """Manifest + blob for a random-weight model at the given width."""
    if alpha not in SUPPORTED_ALPHAS:
        raise ValueError(f"unsupported width multiplier {alpha}; pick one of {SUPPORTED_ALPHAS}")
    rng = np.random.default_rng(seed)
    chans = [max(8, int(round(c * alpha / 8)) * 8) for c in CHANNELS]
    writer = InterchangeWriter(f"mobilenet_v1-{alpha}-synthetic", (*input_hw, 3),
                               classifier_classes=classes)

    def random_bn(ch):
        return np.stack([
            rng.uniform(0.5, 1.5, ch),
            rng.normal(0.0, 0.3, ch),
            rng.normal(0.0, 0.5, ch),
            rng.uniform(0.25, 2.0, ch),
        ]).astype(np.float32)

    def random_kernel(shape, fan_in):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), shape).astype(np.float32)

    writer.add_layer(LayerRecord(
        "conv1", "conv2d", (3, 3), 2, "same", 3, chans[0], relu=True,
        kernel_data=random_kernel((chans[0], 3, 3, 3), 27),
        bn_data=random_bn(chans[0]),
    ))
    cin = chans[0]
    for i, stride in enumerate(DW_STRIDES):
        blk = i + 1
        writer.add_layer(LayerRecord(
            f"dw{blk}", "depthwise_conv2d", (3, 3), stride, "same", cin, cin, relu=True,
            kernel_data=random_kernel((cin, 3, 3), 9),
            bn_data=random_bn(cin),
        ))
        cout = chans[i + 1]
        writer.add_layer(LayerRecord(
            f"pw{blk}", "pointwise_conv2d", (1, 1), 1, "same", cin, cout, relu=True,
            kernel_data=random_kernel((cout, cin, 1, 1), cin),
            bn_data=random_bn(cout),
        ))
        cin = cout
    return writer.finish()
