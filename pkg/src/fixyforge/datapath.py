"""Fixed-weight datapath construction: canonical signed-digit scaler plans,
carry-save adder tree structure and static product/accumulator bit-widths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import OverflowInfeasibleError, ParameterError
from .model_ir import Layer
from .quantization import BnRegisters, QParams, QuantTensor, shift_round_half_away

ACC_MAX_BITS = 32  # hardware accumulator ceiling


@dataclass(frozen=True)
class CsdDigits:
    """Signed-digit form: value = sum(sign * 2**position), no two adjacent
    non-zero positions, digit count minimal. Digits stored high-to-low."""

    digits: tuple[tuple[int, int], ...]

    def value(self) -> int:
        return sum(sign << pos for pos, sign in self.digits)

    def __len__(self) -> int:
        return len(self.digits)


@lru_cache(maxsize=None)
def csd_encode(w: int) -> CsdDigits:
    """Canonical signed-digit (non-adjacent form) encoding of an integer."""
    if not -(1 << 31) < w < (1 << 31):
        raise ParameterError(f"value {w} out of 32-bit range")
    sign = -1 if w < 0 else 1
    k = abs(int(w))
    digits = []
    pos = 0
    while k:
        if k & 1:
            d = 2 - (k & 3)  # +1 if k % 4 == 1, -1 if k % 4 == 3
            digits.append((pos, sign * d))
            k -= d
        k >>= 1
        pos += 1
    return CsdDigits(tuple(reversed(digits)))


@dataclass(frozen=True)
class ShiftAddPlan:
    """Replacement of one fixed multiplier by hard-coded shifts and adds."""

    weight: int
    terms: CsdDigits
    is_pruned: bool = False

    @property
    def adder_count(self) -> int:
        return max(len(self.terms) - 1, 0)

    def evaluate(self, x: int) -> int:
        if self.is_pruned:
            return 0
        return sum(sign * (x << pos) for pos, sign in self.terms.digits)


def plan_scaler(w: int, pruned: bool = False) -> ShiftAddPlan:
    if not -128 <= w <= 127:
        raise ParameterError(f"weight {w} outside int8 range")
    if pruned or w == 0:
        return ShiftAddPlan(int(w), CsdDigits(()), is_pruned=True)
    return ShiftAddPlan(int(w), csd_encode(int(w)))


@lru_cache(maxsize=None)
def _csd_digit_count(w: int) -> int:
    return len(csd_encode(w))


def _width_for(lo: int, hi: int) -> int:
    """Minimal two's-complement width holding every value in [lo, hi]."""
    bits = 1
    if hi > 0:
        bits = max(bits, int(hi).bit_length() + 1)
    if lo < 0:
        bits = max(bits, int(-lo - 1).bit_length() + 1)
    return bits


def _width_for_arr(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized _width_for; values stay far below 2**53 so frexp is exact."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    hi_bits = np.where(hi > 0, np.frexp(np.maximum(hi, 1).astype(np.float64))[1] + 1, 1)
    neg = np.maximum(-lo - 1, 0)
    lo_bits = np.where(lo < 0, np.frexp(np.maximum(neg, 1).astype(np.float64))[1] + 1, 1)
    lo_bits = np.where((lo < 0) & (neg == 0), 1, lo_bits)  # lo == -1 needs 1 bit
    return np.maximum(np.maximum(hi_bits, lo_bits), 1).astype(np.int64)


@dataclass
class PrecisionMap:
    """Statically derived minimal bit-widths for one datapath stage.

    Every interval is exact under interval arithmetic over the actual
    weights, so each width is minimal: one bit less admits an overflow
    witness (inputs at the matching interval corner).
    """

    input_range: tuple[int, int]
    product_bits: np.ndarray          # per weight position, flat layout
    acc_range: tuple[int, int]        # widest accumulator interval over channels
    acc_bits: int
    acc_range_per_ch: np.ndarray      # (C, 2) lo/hi per output channel
    bn_product_bits: int
    out_range: tuple[int, int]        # post BN (+bias), pre ReLU/Q
    out_bits: int


def _tap_matrix(layer: Layer, values: np.ndarray) -> np.ndarray:
    """Weights as (out_channels, taps) int32; taps are the per-output-pixel
    multiplier inputs (kernel * in_ch for conv, kernel only for depthwise).
    Axis 0 of every stored layout is the output channel."""
    return values.reshape(values.shape[0], -1).astype(np.int32)


def analyze_precision(
    layer: Layer,
    q: QuantTensor,
    input_range: tuple[int, int],
    bn: BnRegisters | None = None,
) -> PrecisionMap:
    """Interval arithmetic over the exact weight values."""
    lo, hi = input_range
    if lo > hi:
        raise ParameterError(f"empty input range {input_range}")
    taps = _tap_matrix(layer, q.values)
    w64 = taps.astype(np.int64)
    prod_lo = np.minimum(w64 * lo, w64 * hi)
    prod_hi = np.maximum(w64 * lo, w64 * hi)
    product_bits = _width_for_arr(prod_lo, prod_hi) if taps.size else np.zeros((0,), np.int64)

    acc_lo_ch = prod_lo.sum(axis=1) if taps.size else np.zeros(1, np.int64)
    acc_hi_ch = prod_hi.sum(axis=1) if taps.size else np.zeros(1, np.int64)
    acc_lo = int(acc_lo_ch.min())
    acc_hi = int(acc_hi_ch.max())
    acc_bits = _width_for(acc_lo, acc_hi)
    if acc_bits > ACC_MAX_BITS:
        raise OverflowInfeasibleError(
            f"layer {layer.id}: accumulator needs {acc_bits} bits, hardware allows {ACC_MAX_BITS}"
        )

    if bn is not None:
        mant = bn.mant.astype(np.int64)
        bp_lo = np.minimum(acc_lo_ch * mant, acc_hi_ch * mant)
        bp_hi = np.maximum(acc_lo_ch * mant, acc_hi_ch * mant)
        bn_product_bits = max(int(_width_for_arr(bp_lo, bp_hi).max()), 1)
        sh_lo = shift_round_half_away(bp_lo, bn.exp.astype(np.int64))
        sh_hi = shift_round_half_away(bp_hi, bn.exp.astype(np.int64))
        out_lo = int(np.min(sh_lo + bn.bias))
        out_hi = int(np.max(sh_hi + bn.bias))
    else:
        bn_product_bits = acc_bits
        out_lo, out_hi = acc_lo, acc_hi
    out_bits = _width_for(out_lo, out_hi)
    return PrecisionMap(
        input_range=(lo, hi),
        product_bits=product_bits,
        acc_range=(acc_lo, acc_hi),
        acc_bits=acc_bits,
        acc_range_per_ch=np.stack([acc_lo_ch, acc_hi_ch], axis=1),
        bn_product_bits=bn_product_bits,
        out_range=(out_lo, out_hi),
        out_bits=out_bits,
    )


def maximizing_input(layer: Layer, q: QuantTensor, input_range: tuple[int, int], channel: int) -> np.ndarray:
    """Corner input (per tap) driving the given output channel's accumulator
    to the top of its analyzed interval."""
    lo, hi = input_range
    taps = _tap_matrix(layer, q.values)[channel]
    return np.where(taps > 0, hi, lo).astype(np.int64)


@dataclass
class TreeDescriptor:
    """Balanced carry-save tree shape per output channel."""

    leaves: np.ndarray  # kept taps per output channel

    @property
    def depth(self) -> np.ndarray:
        lv = np.maximum(self.leaves, 1)
        return np.ceil(np.log2(lv)).astype(np.int64)

    @property
    def tree_adders(self) -> int:
        return int(np.maximum(self.leaves - 1, 0).sum())


@dataclass
class HwCost:
    adders: int
    flops: int
    effective_ops_per_cycle: int


@dataclass
class DatapathStage:
    """One fully-parallel conv stage: scaler plans + CS tree + BN + ReLU + Q."""

    layer: Layer
    q_weights: QuantTensor
    bn: BnRegisters
    relu: bool
    qparams: QParams
    precision: PrecisionMap
    tree: TreeDescriptor
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    acc_scale: np.ndarray = field(default=None, repr=False)   # real value of one acc LSB per channel
    out_scale: float = 1.0                                    # real value of one output LSB

    @property
    def is_pool(self) -> bool:
        return self.layer.kind == "maxpool"

    def tap_weights(self) -> np.ndarray:
        """(out_channels, taps) int32 weight matrix (pruned weights are 0)."""
        return _tap_matrix(self.layer, self.q_weights.values)

    def plans(self) -> list[ShiftAddPlan]:
        """Scaler plans in flat kernel-storage order."""
        return [plan_scaler(int(w)) for w in self.q_weights.values.ravel()]

    @property
    def kept_weights(self) -> int:
        return int(np.count_nonzero(self.q_weights.values))

    @property
    def nominal_macs_per_px(self) -> int:
        return int(self.q_weights.values.size)

    @property
    def kept_macs_per_px(self) -> int:
        return self.kept_weights


def build_stage(
    layer: Layer,
    q_weights: QuantTensor,
    bn: BnRegisters,
    qparams: QParams,
    in_shape: tuple[int, int, int],
    out_shape: tuple[int, int, int],
    input_range: tuple[int, int],
    relu: bool = True,
    acc_scale: np.ndarray | float = 1.0,
    out_scale: float = 1.0,
) -> DatapathStage:
    if layer.is_conv:
        expected_c = layer.out_ch
        if bn.channels != expected_c:
            raise ParameterError(
                f"layer {layer.id}: BN registers cover {bn.channels} channels, layer has {expected_c}"
            )
    precision = analyze_precision(layer, q_weights, input_range, bn)
    taps = _tap_matrix(layer, q_weights.values)
    leaves = np.count_nonzero(taps, axis=1)
    return DatapathStage(
        layer=layer,
        q_weights=q_weights,
        bn=bn,
        relu=relu,
        qparams=qparams,
        precision=precision,
        tree=TreeDescriptor(leaves.astype(np.int64)),
        in_shape=in_shape,
        out_shape=out_shape,
        acc_scale=np.broadcast_to(np.asarray(acc_scale, np.float64), (taps.shape[0],)).copy(),
        out_scale=out_scale,
    )


# register rank inserted every 4 adder levels to meet the clock target
REGISTER_LEVELS = 4


def stage_cost(stage: DatapathStage) -> HwCost:
    """Operator/storage counts used by the PPA model.

    adders: scaler adders for every kept weight plus (leaves - 1) tree adders
    per output channel.  flops: pipeline register bits, one rank per
    REGISTER_LEVELS tree levels at accumulator width, plus the output
    register.  effective_ops_per_cycle: 2 * kept MACs per output pixel.
    """
    values = stage.q_weights.values.ravel()
    scaler_adders = int(sum(_csd_digit_count(int(w)) - 1 for w in values if w))
    tree_adders = stage.tree.tree_adders
    ranks = np.ceil(stage.tree.depth / REGISTER_LEVELS).astype(np.int64)
    flops = int((ranks * stage.precision.acc_bits).sum())
    flops += stage.out_shape[2] * stage.qparams.output_bits
    return HwCost(
        adders=scaler_adders + tree_adders,
        flops=flops,
        effective_ops_per_cycle=2 * stage.kept_macs_per_px,
    )


def scaler_adder_count(values: np.ndarray) -> int:
    return int(sum(_csd_digit_count(int(w)) - 1 for w in values.ravel() if w))
