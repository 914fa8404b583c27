"""Writer for the neutral model interchange format.

A model is a JSON manifest plus a raw blob of little-endian float32 values.
Manifest schema:

    {"name": str,
     "input": {"h": int, "w": int, "c": int, "bits": int},
     "layers": [{"id": str, "kind": str, "k": [kh, kw], "stride": int,
                 "pad": "same"|"valid", "in_ch": int, "out_ch": int,
                 "relu": bool?,
                 "weights": {"offset": int, "count": int},
                 "bias": {"offset": int, "count": int}?,
                 "bn": {"offset": int, "count": int, "eps": float}?}],
     "classifier": {"classes": int}?}

Offsets are byte offsets into the blob; counts are float32 element counts.
Tensor layouts: conv kernels [out_ch][in_ch][kh][kw], depthwise kernels
[ch][kh][kw], BN data gamma/beta/mean/var concatenated (4 * out_ch values).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

BLOB_DTYPE = np.dtype("<f4")


@dataclass
class LayerRecord:
    id: str
    kind: str
    kernel: tuple[int, int]
    stride: int
    padding: str
    in_ch: int
    out_ch: int
    relu: bool = False
    kernel_data: np.ndarray | None = None
    bias_data: np.ndarray | None = None
    bn_data: np.ndarray | None = None  # stacked (4, out_ch): gamma, beta, mean, var
    bn_eps: float = 1e-3


@dataclass
class InterchangeWriter:
    name: str
    input_hwc: tuple[int, int, int]
    bits: int = 8
    classifier_classes: int = 0
    layers: list[LayerRecord] = field(default_factory=list)

    def add_layer(self, rec: LayerRecord):
        self.layers.append(rec)

    def finish(self) -> tuple[str, bytes]:
        chunks: list[bytes] = []
        offset = 0

        def push(arr: np.ndarray) -> dict:
            nonlocal offset
            raw = np.ascontiguousarray(arr, dtype=BLOB_DTYPE).tobytes()
            chunks.append(raw)
            entry = {"offset": offset, "count": arr.size}
            offset += len(raw)
            return entry

        entries = []
        for rec in self.layers:
            entry = {
                "id": rec.id,
                "kind": rec.kind,
                "k": list(rec.kernel),
                "stride": rec.stride,
                "pad": rec.padding,
                "in_ch": rec.in_ch,
                "out_ch": rec.out_ch,
            }
            if rec.relu:
                entry["relu"] = True
            if rec.kernel_data is not None:
                entry["weights"] = push(rec.kernel_data)
            if rec.bn_data is not None:
                entry["bn"] = push(rec.bn_data) | {"eps": rec.bn_eps}
            elif rec.bias_data is not None and np.any(rec.bias_data):
                entry["bias"] = push(rec.bias_data)
            entries.append(entry)

        doc = {
            "name": self.name,
            "input": {"h": self.input_hwc[0], "w": self.input_hwc[1],
                      "c": self.input_hwc[2], "bits": self.bits},
            "layers": entries,
        }
        if self.classifier_classes:
            doc["classifier"] = {"classes": self.classifier_classes}
        return json.dumps(doc, indent=1, sort_keys=True), b"".join(chunks)
