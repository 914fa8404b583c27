"""Inter-stage buffering micro-architecture: SRAM line-buffer banks, the
flip-flop window shift register, stride decimation and pipeline scheduling.

Timing contract: a K-row buffered stage delays its output stream by a fill
of (K-1)*W + K cycles relative to its input stream; outputs are emitted in
scan order, each aligned to the stride-block-end input pixel.  Unbuffered
(1x1) stages pass timing through.  Frame cycles for a same-padded conv chain
therefore come to H*W + sum of fills.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedOpError
from .model_ir import Layer, out_size, same_padding

SUPPORTED_KERNELS = (1, 2, 3, 5, 7)  # 2 only for pooling windows
SUPPORTED_STRIDES = (1, 2)


@dataclass(frozen=True)
class LineBufferSpec:
    """Buffering in front of one datapath stage.

    bank_count = K_h + 1 single-port SRAM banks (write one row while reading
    K_h rows); each bank stores one image row of C-channel words.  The shift
    register holds the K_h x K_w x C window.  1x1 stages chain directly and
    need no buffer (bank_count 0).
    """

    kernel: tuple[int, int]
    stride: int
    width: int
    channels: int
    bits: int
    tap_enabled: bool = False

    @property
    def bank_count(self) -> int:
        return self.kernel[0] + 1 if self.kernel[0] > 1 else 0

    @property
    def bank_depth(self) -> int:
        return self.width if self.bank_count else 0

    @property
    def word_bits(self) -> int:
        return self.channels * self.bits

    @property
    def sram_bits(self) -> int:
        return self.bank_count * self.bank_depth * self.word_bits

    @property
    def shiftreg_bits(self) -> int:
        if self.kernel[0] <= 1 and self.kernel[1] <= 1:
            return 0
        return self.kernel[0] * self.kernel[1] * self.word_bits

    @property
    def fill_latency(self) -> int:
        if self.bank_count == 0:
            return 0
        return (self.kernel[0] - 1) * self.width + self.kernel[0]


def plan_line_buffer(layer: Layer, in_shape: tuple[int, int, int], bits: int = 8,
                     tap_enabled: bool = False) -> LineBufferSpec:
    kh, kw = layer.kernel
    if kh not in SUPPORTED_KERNELS or kw not in SUPPORTED_KERNELS:
        raise UnsupportedOpError(f"layer {layer.id}: kernel {layer.kernel} not supported by the line buffer")
    if layer.stride not in SUPPORTED_STRIDES:
        raise UnsupportedOpError(f"layer {layer.id}: stride {layer.stride} not supported")
    h, w, c = in_shape
    return LineBufferSpec(kernel=(kh, kw), stride=layer.stride, width=w, channels=c,
                          bits=bits, tap_enabled=tap_enabled)


def sram_bandwidth(spec: LineBufferSpec) -> tuple[int, int]:
    """(word reads per output with the shift register, naive reads per output).

    The shift register advances one stored column per output step, so only
    K_h words are fetched where re-reading the window would fetch K_h * K_w.
    """
    kh, kw = spec.kernel
    if spec.bank_count == 0:
        return 1, 1
    return kh, kh * kw


@dataclass(frozen=True)
class StageGeometry:
    """Spatial geometry one stage imposes on the pixel stream."""

    kernel: tuple[int, int]
    stride: int
    padding: str
    in_h: int
    in_w: int

    @property
    def out_h(self) -> int:
        return out_size(self.in_h, self.kernel[0], self.stride, self.padding)

    @property
    def out_w(self) -> int:
        return out_size(self.in_w, self.kernel[1], self.stride, self.padding)

    @property
    def pad_before(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        return (
            same_padding(self.in_h, self.kernel[0], self.stride)[0],
            same_padding(self.in_w, self.kernel[1], self.stride)[0],
        )

    @property
    def fill_latency(self) -> int:
        kh = self.kernel[0]
        if kh <= 1:
            return 0
        return (kh - 1) * self.in_w + kh


def trigger_indices(geom: StageGeometry) -> np.ndarray:
    """Input scan index whose arrival triggers each output emission.

    Outputs align to the end of their stride block (clamped at the frame
    edge), which keeps emission monotone, at most one per cycle, and makes
    the final output of a frame trail the final input by exactly the fill.
    """
    s = geom.stride
    rows = np.minimum(np.arange(geom.out_h) * s + (s - 1), geom.in_h - 1)
    cols = np.minimum(np.arange(geom.out_w) * s + (s - 1), geom.in_w - 1)
    return (rows[:, None] * geom.in_w + cols[None, :]).ravel()


def propagate_times(geoms: list[StageGeometry], in_times: np.ndarray) -> list[np.ndarray]:
    """Per-stage output emission times given first-stage input arrival times."""
    out = []
    times = np.asarray(in_times, dtype=np.int64)
    for geom in geoms:
        times = times[trigger_indices(geom)] + geom.fill_latency
        out.append(times)
    return out


@dataclass(frozen=True)
class StageTiming:
    rate: float                 # average outputs per cycle
    fill_latency: int
    reads_per_output: int       # SRAM word reads, shift register in place
    naive_reads_per_output: int
    writes_per_output: float    # word writes per output (stride^2 on average)
    out_px: int


@dataclass
class PipelineSchedule:
    input_shape: tuple[int, int, int]
    stages: list[StageTiming]
    total_frame_cycles: int

    @property
    def total_fill_latency(self) -> int:
        return sum(st.fill_latency for st in self.stages)


def schedule_pipeline(geoms: list[StageGeometry], input_shape: tuple[int, int, int],
                      bits: int = 8) -> PipelineSchedule:
    """Static timing of a buffered stage chain.

    Stage rates decay by stride^2 per stage; total frame cycles equal the
    emission time of the last output, which for same-padded chains is
    H*W + sum of fill latencies.
    """
    h, w, _ = input_shape
    n_in = h * w
    timings = []
    rate = 1.0
    for geom in geoms:
        rate = rate / (geom.stride ** 2)
        kh, kw = geom.kernel
        reads, naive = (kh, kh * kw) if kh > 1 else (1, 1)
        timings.append(
            StageTiming(
                rate=rate,
                fill_latency=geom.fill_latency,
                reads_per_output=reads,
                naive_reads_per_output=naive,
                writes_per_output=float(geom.stride ** 2),
                out_px=geom.out_h * geom.out_w,
            )
        )
    if geoms:
        emission = propagate_times(geoms, np.arange(n_in))
        total = int(emission[-1][-1]) + 1
    else:
        total = n_in
    return PipelineSchedule(input_shape, timings, total)
