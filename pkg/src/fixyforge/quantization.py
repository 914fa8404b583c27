"""Weight quantization, pruning policies, BN register folding and the
accumulator-to-activation requantization step.

All rounding is round-half-away-from-zero; one rule everywhere avoids
cross-module mismatches between the golden model, the bit-exact simulator
and the emitted hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ParameterError

INT8_MAX = 127  # -128 excluded so negation stays closed under int8

BN_MANT_BITS = 16  # signed mantissa
BN_EXP_BITS = 5    # right-shift exponent field
_BN_MANT_MAX = (1 << (BN_MANT_BITS - 1)) - 1   # 32767
_BN_MANT_MIN_NORM = 1 << (BN_MANT_BITS - 2)    # 16384 keeps rel. error <= 2^-15
_BN_EXP_MAX = (1 << BN_EXP_BITS) - 1


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    """Round to nearest with ties away from zero."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def shift_round_half_away(v: np.ndarray, shift: np.ndarray | int) -> np.ndarray:
    """Integer right shift by ``shift`` with round-half-away-from-zero.

    Works element-wise on int64 arrays; shift may be scalar or per-element.
    """
    v = np.asarray(v, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64)
    half = np.where(shift > 0, np.int64(1) << np.maximum(shift - 1, 0), 0)
    mag = (np.abs(v) + half) >> shift
    return np.where(v < 0, -mag, mag)


@dataclass
class QuantTensor:
    """Symmetric int8 tensor: real value ~= values * scale (zero point 0).

    ``scale`` is scalar for per-tensor granularity or a per-output-channel
    vector (axis 0 of the stored layout) for per-channel.
    """

    values: np.ndarray
    scale: np.ndarray
    granularity: str = "per_tensor"

    def dequantize(self) -> np.ndarray:
        scale = self.scale
        if self.granularity == "per_channel":
            scale = scale.reshape((-1,) + (1,) * (self.values.ndim - 1))
        return self.values.astype(np.float64) * scale


@dataclass
class PruneReport:
    kept: int
    removed_zero: int
    removed_small: int
    threshold_used: int

    @property
    def total(self) -> int:
        return self.kept + self.removed_zero + self.removed_small

    @property
    def sparsity(self) -> float:
        return (self.removed_zero + self.removed_small) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "removed_zero": self.removed_zero,
            "removed_small": self.removed_small,
            "sparsity": self.sparsity,
            "threshold_used": self.threshold_used,
        }


@dataclass
class BnRegisters:
    """Per-channel programmable scale/bias in the accumulator domain.

    Scale is a signed 16-bit mantissa with a 5-bit right-shift exponent
    (one exponent field per channel register); bias is a 32-bit signed
    integer added after the scale step.  Real scale ~= mant / 2**exp.
    """

    mant: np.ndarray   # int32, |mant| <= 32767
    exp: np.ndarray    # int32 in [0, 31]
    bias: np.ndarray   # int32, accumulator domain
    real_scale: np.ndarray = field(repr=False, default=None)
    real_bias: np.ndarray = field(repr=False, default=None)

    @property
    def channels(self) -> int:
        return self.mant.size

    @property
    def register_count(self) -> int:
        return 2 * self.channels

    def dequantized_scale(self) -> np.ndarray:
        return self.mant.astype(np.float64) / np.power(2.0, self.exp)


@dataclass(frozen=True)
class QParams:
    right_shift: int
    output_bits: int = 8
    output_signed: bool = False

    def __post_init__(self):
        if not 0 <= self.right_shift <= 31:
            raise ParameterError(f"right_shift {self.right_shift} outside 0..31")

    @property
    def lo(self) -> int:
        return -(1 << (self.output_bits - 1)) if self.output_signed else 0

    @property
    def hi(self) -> int:
        return (1 << (self.output_bits - 1)) - 1 if self.output_signed else (1 << self.output_bits) - 1


def quantize_weights(tensor: np.ndarray, granularity: str = "per_tensor") -> QuantTensor:
    """Symmetric int8 quantization: scale = max|w| / 127 over the group."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.size == 0:
        raise DataError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(tensor)):
        raise DataError("tensor contains NaN or Inf")
    if granularity == "per_tensor":
        peak = np.max(np.abs(tensor))
        scale = np.float64(peak / INT8_MAX) if peak > 0 else np.float64(1.0)
        q = round_half_away(tensor / scale)
    elif granularity == "per_channel":
        flat = tensor.reshape(tensor.shape[0], -1)
        peak = np.max(np.abs(flat), axis=1)
        scale = np.where(peak > 0, peak / INT8_MAX, 1.0)
        q = round_half_away(flat / scale[:, None]).reshape(tensor.shape)
    else:
        raise ParameterError(f"unknown granularity '{granularity}'")
    values = np.clip(q, -INT8_MAX, INT8_MAX).astype(np.int8)
    return QuantTensor(values, np.atleast_1d(scale) if granularity == "per_channel" else scale, granularity)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactZero:
    pass


@dataclass(frozen=True)
class MagnitudeBelow:
    threshold: int

    def __post_init__(self):
        if not 0 <= self.threshold <= INT8_MAX:
            raise ParameterError(f"threshold {self.threshold} outside 0..127")


@dataclass(frozen=True)
class TargetSparsity:
    sparsity: float

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ParameterError(f"target sparsity {self.sparsity} outside [0, 1)")


PrunePolicy = ExactZero | MagnitudeBelow | TargetSparsity


def _report_from_masks(values: np.ndarray, pruned: np.ndarray) -> PruneReport:
    removed_zero = int(np.count_nonzero(pruned & (values == 0)))
    removed_small = int(np.count_nonzero(pruned & (values != 0)))
    kept = values.size - removed_zero - removed_small
    threshold = int(np.max(np.abs(values[pruned]))) if pruned.any() else 0
    return PruneReport(kept, removed_zero, removed_small, threshold)


def prune_weights(q: QuantTensor, policy: PrunePolicy) -> tuple[QuantTensor, PruneReport]:
    """Apply a pruning policy to one tensor; pruned positions become 0."""
    (out,), report = prune_model([q], policy)
    return out, report


def prune_model(tensors: list[QuantTensor], policy: PrunePolicy) -> tuple[list[QuantTensor], PruneReport]:
    """Prune across a whole model.

    target_sparsity ranks all weights globally by (|w|, tensor order, index)
    and prunes the smallest first, so the resulting sparsity is >= the target
    and minimal among achievable values.
    """
    values = [t.values for t in tensors]
    if isinstance(policy, ExactZero):
        masks = [v == 0 for v in values]
    elif isinstance(policy, MagnitudeBelow):
        masks = [np.abs(v.astype(np.int32)) < policy.threshold for v in values]
    elif isinstance(policy, TargetSparsity):
        total = sum(v.size for v in values)
        target = int(np.ceil(policy.sparsity * total))
        mags = np.concatenate([np.abs(v.astype(np.int32)).ravel() for v in values]) if total else np.zeros(0)
        order = np.argsort(mags, kind="stable")  # stable: ties fall in (tensor, index) order
        cut = np.zeros(total, dtype=bool)
        cut[order[:target]] = True
        masks = []
        pos = 0
        for v in values:
            masks.append(cut[pos:pos + v.size].reshape(v.shape))
            pos += v.size
    else:
        raise ParameterError(f"unknown pruning policy {policy!r}")

    all_values = np.concatenate([v.ravel() for v in values]) if values else np.zeros(0, np.int8)
    all_masks = np.concatenate([m.ravel() for m in masks]) if masks else np.zeros(0, bool)
    report = _report_from_masks(all_values, all_masks)
    out = []
    for t, mask in zip(tensors, masks):
        pruned_values = np.where(mask, np.int8(0), t.values)
        out.append(QuantTensor(pruned_values, t.scale, t.granularity))
    return out, report


# ---------------------------------------------------------------------------
# BN folding
# ---------------------------------------------------------------------------

def fold_bn(
    gamma: np.ndarray,
    beta: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float,
    acc_scale: np.ndarray | float = 1.0,
    out_scale: float | None = None,
) -> BnRegisters:
    """Fold BN statistics into fixed-point scale/bias registers.

    Real scale = gamma / sqrt(var + eps); real bias = beta - mean * scale.
    ``acc_scale`` is the real value of one accumulator LSB (scalar, or per
    channel when weights are quantized per channel); ``out_scale`` is the
    real value of one LSB of the BN output (defaults to max(acc_scale), so
    every channel lands in one shared output domain).  The registers then
    act directly on accumulator integers:

        bn_out = ((acc * mant) >> exp) + bias  ~=  (real BN output) / out_scale
    """
    gamma, beta, mean, var = (np.asarray(a, dtype=np.float64) for a in (gamma, beta, mean, var))
    if not (gamma.shape == beta.shape == mean.shape == var.shape):
        raise ParameterError("BN parameter vectors must share one shape")
    if np.any(var < 0):
        raise NumericError("negative variance")
    denom = var + eps
    if np.any(denom <= 0):
        raise NumericError("var + eps must be positive")
    real_scale = gamma / np.sqrt(denom)
    real_bias = beta - mean * real_scale

    acc_scale = np.broadcast_to(np.asarray(acc_scale, dtype=np.float64), gamma.shape)
    if np.any(acc_scale <= 0):
        raise NumericError("accumulator scale must be positive")
    if out_scale is None:
        out_scale = float(np.max(acc_scale))
    eff = real_scale * acc_scale / out_scale  # scale acting on acc integers
    bias_int = round_half_away(real_bias / out_scale)
    if np.any(np.abs(bias_int) > np.iinfo(np.int32).max):
        raise NumericError("folded bias exceeds 32-bit range")

    if np.any(np.abs(eff) > _BN_MANT_MAX):
        raise NumericError(
            "BN scale exceeds the 16-bit register range (degenerate variance?)"
        )
    mant = np.zeros(gamma.shape, dtype=np.int64)
    exp = np.zeros(gamma.shape, dtype=np.int64)
    nz = eff != 0
    if np.any(nz):
        # normalize each channel mantissa into [16384, 32767]
        safe = np.where(nz, np.abs(eff), 1.0)
        e = (BN_MANT_BITS - 2) - np.floor(np.log2(safe)).astype(np.int64)
        e = np.clip(e, 0, _BN_EXP_MAX)
        m = round_half_away(eff * np.power(2.0, e))
        over = np.abs(m) > _BN_MANT_MAX
        e = np.where(over & (e > 0), e - 1, e)
        m = np.where(over, round_half_away(eff * np.power(2.0, e)), m)
        m = np.clip(m, -_BN_MANT_MAX, _BN_MANT_MAX)
        mant = np.where(nz, m.astype(np.int64), 0)
        exp = np.where(nz, e, 0)
    return BnRegisters(
        mant=mant.astype(np.int32),
        exp=exp.astype(np.int32),
        bias=bias_int.astype(np.int32),
        real_scale=real_scale,
        real_bias=real_bias,
    )


def identity_bn(channels: int, bias_real: np.ndarray | None = None, acc_scale: float = 1.0) -> BnRegisters:
    """Registers for a stage without BN: unit scale plus the conv bias."""
    ones = np.ones(channels)
    zeros = np.zeros(channels)
    bias = zeros if bias_real is None else np.asarray(bias_real, dtype=np.float64)
    return fold_bn(ones, bias, zeros, ones, 0.0, acc_scale=acc_scale)


def apply_q(acc: np.ndarray | int, q: QParams) -> np.ndarray | int:
    """Requantize an accumulator value to the activation width (saturating)."""
    arr = np.asarray(acc, dtype=np.int64)
    out = shift_round_half_away(arr, q.right_shift)
    out = np.clip(out, q.lo, q.hi)
    return int(out) if np.isscalar(acc) or arr.ndim == 0 else out
