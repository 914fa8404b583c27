"""Reference inference and simulation of the fixed pipeline.

Three execution levels:

* ``run_reference`` - floating-point golden model over a ShapedModel.
* ``run_fixed`` - bit-exact integer evaluation of a FixedPipeline; every
  intermediate is checked against its statically analyzed width and any
  excursion aborts the run (overflow is a precision-analysis bug, never
  silent wraparound).
* ``run_cycle_accurate`` - streams pixels through modeled SRAM banks and the
  window shift register, checking the single-port discipline and producing
  output bytes identical to ``run_fixed`` plus an exact cycle count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .datapath import DatapathStage
from .errors import ScheduleViolation, ShapeError, SimulationError
from .line_buffer import (
    LineBufferSpec,
    PipelineSchedule,
    StageGeometry,
    trigger_indices,
)
from .model_ir import InputSpec, ShapedModel, same_padding
from .quantization import shift_round_half_away


@dataclass
class FixedPipeline:
    """Ordered datapath stages with their buffers and static schedule.

    ``taps`` lists stage indices whose output stream is exposed as a
    secondary pipeline output, letting a consumer bind to a shallower depth
    than the full chain.
    """

    stages: list[DatapathStage]
    buffers: list[LineBufferSpec]
    schedule: PipelineSchedule
    input_spec: InputSpec
    input_range: tuple[int, int] = (0, 255)
    name: str = "pipeline"
    taps: tuple[int, ...] = ()

    def geometries(self) -> list[StageGeometry]:
        geoms = []
        for stage in self.stages:
            h, w, _ = stage.in_shape
            geoms.append(
                StageGeometry(stage.layer.kernel, stage.layer.stride, stage.layer.padding, h, w)
            )
        return geoms

    def unit_stage_groups(self) -> list[list[int]]:
        """Stage indices grouped into countable conv units (dw+pw pairs fuse)."""
        groups: list[list[int]] = []
        i = 0
        while i < len(self.stages):
            kind = self.stages[i].layer.kind
            if (kind == "depthwise_conv2d" and i + 1 < len(self.stages)
                    and self.stages[i + 1].layer.kind == "pointwise_conv2d"):
                groups.append([i, i + 1])
                i += 2
            else:
                groups.append([i])
                i += 1
        return groups

    @property
    def output_shape(self) -> tuple[int, int, int]:
        if not self.stages:
            spec = self.input_spec
            return (spec.h, spec.w, spec.c)
        return self.stages[-1].out_shape

    @property
    def output_scale(self) -> float:
        return self.stages[-1].out_scale if self.stages else 1.0


@dataclass
class SimResult:
    output: np.ndarray
    snapshots: list[np.ndarray] = field(default_factory=list)
    cycle_count: int | None = None
    sram_reads: int | None = None
    sram_writes: int | None = None
    reads_per_output: list[np.ndarray] | None = None


def padded_windows(x: np.ndarray, kernel: tuple[int, int], stride: int, padding: str) -> np.ndarray:
    """(H_out, W_out, C, K_h, K_w) view of x with zero padding applied."""
    kh, kw = kernel
    h, w, _ = x.shape
    if padding == "same":
        pbh, pah = same_padding(h, kh, stride)
        pbw, paw = same_padding(w, kw, stride)
    else:
        pbh = pah = pbw = paw = 0
    xp = np.pad(x, ((pbh, pah), (pbw, paw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))
    return win[::stride, ::stride]


# ---------------------------------------------------------------------------
# Golden floating-point reference
# ---------------------------------------------------------------------------

def run_reference(shaped: ShapedModel, image: np.ndarray, keep_snapshots: bool = False) -> SimResult:
    """Float convolution + BN + ReLU chain, no quantization anywhere."""
    spec = shaped.model.input_spec
    if image.shape != (spec.h, spec.w, spec.c):
        raise ShapeError(f"image shape {image.shape} != input spec {(spec.h, spec.w, spec.c)}")
    x = np.asarray(image, dtype=np.float64)
    snaps = []
    for layer in shaped.model.layers:
        store = shaped.model.weights.get(layer.id, {})
        if layer.kind == "maxpool":
            win = padded_windows(x, layer.kernel, layer.stride, layer.padding)
            x = win.max(axis=(3, 4))
        elif layer.kind == "batch_norm":
            g, b = store["gamma"], store["beta"]
            m, v = store["mean"], store["var"]
            x = g / np.sqrt(v + layer.bn_eps) * (x - m) + b
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        elif layer.is_conv:
            kern = store["kernel"].astype(np.float64)
            if layer.kind == "pointwise_conv2d":
                x = np.einsum("hwc,nc->hwn", x, kern[:, :, 0, 0])
            elif layer.kind == "depthwise_conv2d":
                win = padded_windows(x, layer.kernel, layer.stride, layer.padding)
                x = np.einsum("hwcij,cij->hwc", win, kern)
            else:
                win = padded_windows(x, layer.kernel, layer.stride, layer.padding)
                x = np.einsum("hwcij,ncij->hwn", win, kern)
            if layer.has_bn:
                g, b = store["gamma"], store["beta"]
                m, v = store["mean"], store["var"]
                x = g / np.sqrt(v + layer.bn_eps) * (x - m) + b
            elif "bias" in store:
                x = x + store["bias"]
            if layer.relu_after:
                x = np.maximum(x, 0.0)
        if keep_snapshots:
            snaps.append(x.copy())
    return SimResult(output=x, snapshots=snaps)


# ---------------------------------------------------------------------------
# Bit-exact integer arithmetic shared by both fixed-pipeline simulators
# ---------------------------------------------------------------------------

def stage_accumulate(stage: DatapathStage, x: np.ndarray) -> np.ndarray:
    """Pre-BN accumulator over an (H, W, C_in) int64 activation map."""
    layer = stage.layer
    kern = stage.q_weights.values.astype(np.int64)
    if layer.kind == "pointwise_conv2d":
        return np.einsum("hwc,nc->hwn", x, kern[:, :, 0, 0])
    win = padded_windows(x, layer.kernel, layer.stride, layer.padding)
    if layer.kind == "depthwise_conv2d":
        return np.einsum("hwcij,cij->hwc", win, kern)
    return np.einsum("hwcij,ncij->hwn", win, kern)


def stage_postprocess(stage: DatapathStage, acc: np.ndarray) -> np.ndarray:
    """BN scale/shift + bias, ReLU, requantization; instrumented bit-exactly.

    acc has channels on the last axis.  Any value escaping its statically
    analyzed interval aborts the run.
    """
    pm = stage.precision
    per_ch = pm.acc_range_per_ch
    lead = tuple([None] * (acc.ndim - 1))
    if np.any(acc < per_ch[:, 0][lead]) or np.any(acc > per_ch[:, 1][lead]):
        raise SimulationError(
            f"stage {stage.layer.id}: accumulator escaped its analyzed interval "
            f"(precision-analysis bug)"
        )
    mant = stage.bn.mant.astype(np.int64)
    prod = acc * mant
    bound = np.int64(1) << (pm.bn_product_bits - 1)
    if np.any(prod < -bound) or np.any(prod >= bound):
        raise SimulationError(f"stage {stage.layer.id}: BN product escaped {pm.bn_product_bits} bits")
    out = shift_round_half_away(prod, stage.bn.exp.astype(np.int64)) + stage.bn.bias
    if out.size and (int(out.min()) < pm.out_range[0] or int(out.max()) > pm.out_range[1]):
        raise SimulationError(
            f"stage {stage.layer.id}: BN output escaped analyzed interval {pm.out_range}"
        )
    if stage.relu:
        out = np.maximum(out, 0)
    q = stage.qparams
    out = shift_round_half_away(out, q.right_shift)
    return np.clip(out, q.lo, q.hi)


def _run_stage_functional(stage: DatapathStage, x: np.ndarray) -> np.ndarray:
    if stage.is_pool:
        win = padded_windows(x, stage.layer.kernel, stage.layer.stride, stage.layer.padding)
        return win.max(axis=(3, 4))
    acc = stage_accumulate(stage, x)
    return stage_postprocess(stage, acc)


def run_fixed(pipe: FixedPipeline, image: np.ndarray, keep_snapshots: bool = False) -> SimResult:
    """Bit-exact functional evaluation of the datapath."""
    spec = pipe.input_spec
    if image.shape != (spec.h, spec.w, spec.c):
        raise ShapeError(f"image shape {image.shape} != input spec {(spec.h, spec.w, spec.c)}")
    lo, hi = pipe.input_range
    x = np.asarray(image, dtype=np.int64)
    if x.min() < lo or x.max() > hi:
        raise SimulationError(f"input values escape declared range [{lo}, {hi}]")
    snaps = []
    for stage in pipe.stages:
        x = _run_stage_functional(stage, x)
        if keep_snapshots:
            snaps.append(x.copy())
    out_dtype = np.int8 if (pipe.stages and pipe.stages[-1].qparams.output_signed) else np.uint8
    return SimResult(output=x.astype(out_dtype), snapshots=snaps)


# ---------------------------------------------------------------------------
# Cycle-accurate simulation
# ---------------------------------------------------------------------------

def _replay_stage(stage: DatapathStage, geom: StageGeometry, in_times: np.ndarray,
                  in_values: np.ndarray):
    """Stream one stage: model the bank writes, window reads and emission.

    in_values is (H*W, C) in scan order.  Returns (out_times, out_values,
    word_reads, word_writes, reads_per_output).
    """
    kh, kw = geom.kernel
    h, w = geom.in_h, geom.in_w
    c_in = in_values.shape[1]
    oh, ow = geom.out_h, geom.out_w
    pbh, pbw = geom.pad_before
    s = geom.stride

    out_times = in_times[trigger_indices(geom)] + geom.fill_latency
    if np.any(np.diff(out_times) <= 0):
        raise ScheduleViolation(f"stage {stage.layer.id}: emission stream not strictly monotone")

    if kh == 1 and kw == 1:
        # direct chaining: no SRAM, decimate only
        rows = np.minimum(np.arange(oh) * s, h - 1)
        cols = np.minimum(np.arange(ow) * s, w - 1)
        idx = (rows[:, None] * w + cols[None, :]).ravel()
        picked = in_values[idx]
        if stage.is_pool:
            out_vals = picked
        else:
            acc = np.einsum("pc,nc->pn", picked, stage.q_weights.values.astype(np.int64)[:, :, 0, 0])
            out_vals = stage_postprocess(stage, acc)
        return out_times, out_vals, 0, 0, np.zeros(oh * ow, np.int64)

    bank_count = kh + 1
    banks = np.zeros((bank_count, w, c_in), dtype=np.int64)
    bank_row = np.full(bank_count, -1, dtype=np.int64)

    # group outputs by the row whose arrival drives their window reads: the
    # row right below the window's bottom real row, so one bank is written
    # while the K_h banks above it are read
    top_rows = np.arange(oh) * s - pbh
    bottom_real = np.minimum(top_rows + kh - 1, h - 1)
    capture_rows = bottom_real + 1
    by_capture: dict[int, list[int]] = {}
    for r_o in range(oh):
        by_capture.setdefault(int(capture_rows[r_o]), []).append(r_o)

    windows = np.zeros((oh * ow, kh, kw, c_in), dtype=np.int64)
    reads_per_output = np.zeros(oh * ow, dtype=np.int64)
    total_reads = 0
    total_writes = 0

    def run_captures(cap_row: int, writing: bool):
        nonlocal total_reads
        for r_o in by_capture.get(cap_row, ()):
            rows = top_rows[r_o] + np.arange(kh)
            real_rows = rows[(rows >= 0) & (rows < h)]
            if writing:
                # single-port check: the bank taking the incoming row must
                # not be among the banks being read this row
                wbank = cap_row % bank_count
                rbanks = {int(r % bank_count) for r in real_rows}
                if wbank in rbanks:
                    raise ScheduleViolation(
                        f"stage {stage.layer.id}: bank {wbank} read and written in the same cycle"
                    )
            for r in real_rows:
                if bank_row[r % bank_count] != r:
                    raise ScheduleViolation(
                        f"stage {stage.layer.id}: row {r} evicted before its window was consumed"
                    )
            seen_cols: set[int] = set()
            for c_o in range(ow):
                base = c_o * s - pbw
                j = r_o * ow + c_o
                for kc in range(kw):
                    cc = base + kc
                    if 0 <= cc < w:
                        if cc not in seen_cols:
                            seen_cols.add(cc)
                            reads_per_output[j] += len(real_rows)
                            total_reads += len(real_rows)
                        for kr in range(kh):
                            rr = rows[kr]
                            if 0 <= rr < h:
                                windows[j, kr, kc] = banks[rr % bank_count, cc]

    for r in range(h):
        run_captures(r, writing=True)
        banks[r % bank_count] = in_values[r * w:(r + 1) * w]
        bank_row[r % bank_count] = r
        total_writes += w
    for cap_row in sorted(k for k in by_capture if k >= h):
        run_captures(cap_row, writing=False)

    if stage.is_pool:
        out_vals = windows.max(axis=(1, 2))
    else:
        kern = stage.q_weights.values.astype(np.int64)
        if stage.layer.kind == "depthwise_conv2d":
            acc = np.einsum("pijc,cij->pc", windows, kern)
        else:
            acc = np.einsum("pijc,ncij->pn", windows, kern)
        out_vals = stage_postprocess(stage, acc)
    return out_times, out_vals, total_reads, total_writes, reads_per_output


def run_cycle_accurate(pipe: FixedPipeline, image: np.ndarray) -> SimResult:
    """Stream the image through the modeled buffers; outputs are bit-identical
    to run_fixed and the cycle count matches the static schedule exactly."""
    spec = pipe.input_spec
    if image.shape != (spec.h, spec.w, spec.c):
        raise ShapeError(f"image shape {image.shape} != input spec {(spec.h, spec.w, spec.c)}")
    geoms = pipe.geometries()
    values = np.asarray(image, dtype=np.int64).reshape(spec.h * spec.w, spec.c)
    times = np.arange(spec.h * spec.w, dtype=np.int64)
    reads = writes = 0
    per_output = []
    oh, ow, oc = spec.h, spec.w, spec.c
    for stage, geom in zip(pipe.stages, geoms):
        times, values, r, wr, rpo = _replay_stage(stage, geom, times, values)
        reads += r
        writes += wr
        per_output.append(rpo)
        oh, ow, oc = stage.out_shape
    cycle_count = int(times[-1]) + 1 if len(times) else spec.h * spec.w
    if cycle_count != pipe.schedule.total_frame_cycles:
        raise ScheduleViolation(
            f"measured {cycle_count} cycles, schedule predicted {pipe.schedule.total_frame_cycles}"
        )
    out_dtype = np.int8 if (pipe.stages and pipe.stages[-1].qparams.output_signed) else np.uint8
    output = values.reshape(oh, ow, oc).astype(out_dtype)
    return SimResult(output=output, cycle_count=cycle_count, sram_reads=reads,
                     sram_writes=writes, reads_per_output=per_output)


# ---------------------------------------------------------------------------
# Comparison and I/O
# ---------------------------------------------------------------------------

@dataclass
class DiffReport:
    max_abs: float
    mean_abs: float
    first_mismatch: tuple[int, ...] | None
    mismatches: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.tol


def compare_outputs(a: np.ndarray, b: np.ndarray, tol: float = 0) -> DiffReport:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    bad = diff > tol
    first = tuple(int(i) for i in np.argwhere(bad)[0]) if bad.any() else None
    return DiffReport(
        max_abs=float(diff.max()) if diff.size else 0.0,
        mean_abs=float(diff.mean()) if diff.size else 0.0,
        first_mismatch=first,
        mismatches=int(bad.sum()),
        tol=tol,
    )


def read_image(path: str | Path, input_spec: InputSpec | None = None) -> np.ndarray:
    """Read a binary PGM (P5) / PPM (P6) image, or a raw .bin plane with a
    JSON shape sidecar (same basename, .json suffix)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return _parse_pnm(data)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        shape = tuple(json.loads(sidecar.read_text())["shape"])
    elif input_spec is not None:
        shape = (input_spec.h, input_spec.w, input_spec.c)
    else:
        raise ShapeError(f"{path}: raw image needs a '.json' shape sidecar")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape(shape)


def _parse_pnm(data: bytes) -> np.ndarray:
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval > 255:
        raise ShapeError("16-bit PNM images are not supported")
    channels = 3 if data[:2] == b"P6" else 1
    arr = np.frombuffer(data, dtype=np.uint8, count=h * w * channels, offset=pos)
    return arr.reshape(h, w, channels)


def write_image(path: str | Path, image: np.ndarray):
    path = Path(path)
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    if c == 1:
        path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())
    elif c == 3:
        path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())
    else:
        path.write_bytes(image.tobytes())
        path.with_suffix(".json").write_text(json.dumps({"shape": list(image.shape)}))


def dump_activations(path: str | Path, result: SimResult):
    """Raw little-endian bytes plus a JSON shape sidecar."""
    path = Path(path)
    out = np.ascontiguousarray(result.output)
    path.write_bytes(out.tobytes())
    meta = {"shape": list(out.shape), "dtype": str(out.dtype)}
    if result.cycle_count is not None:
        meta["cycle_count"] = result.cycle_count
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))
