"""Linear and logarithmic weight quantizers.

Both quantizers map a float32 weight tensor onto a small signed codebook:

* linear, k bits: uniform symmetric grid {q * s / L : q = -L..L} with
  L = 2^(k-1) - 1 and s the max-abs scale; 1 bit degenerates to the binary
  codebook {-s, +s} with s = mean(|w|).
* log, k bits: sign--power-of-two grid {0} U {+-2^e : e_min <= e <= e_max}
  with e_max = floor(log2(max|w|)) and e_min = e_max - (2^(k-1) - 2).

Rounding is half-away-from-zero in both the value and the log2 domain.
Scales are snapped to float32 so recorded settings survive serialization
exactly; re-quantizing an output with its own setting is a fixed point.
Biases are never quantized by anything in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import check_finite


class QuantMethod(Enum):
    LINEAR = "linear"
    LOG = "log"


@dataclass(frozen=True)
class QuantSetting:
    """One layer's quantization parameters.

    scale is the max-abs grid scale for LINEAR (mean-abs for 1 bit) and
    2.0**e_max for LOG, so it is always finite and positive; an all-zero
    input tensor records the sentinel scale 1.0.
    """

    method: QuantMethod
    bits: int
    scale: float

    def __post_init__(self):
        lo = 1 if self.method is QuantMethod.LINEAR else 2
        if not lo <= self.bits <= 8:
            raise ValueError(f"{self.method.value} quantization needs bits in [{lo}, 8], got {self.bits}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")

    @property
    def log_exponent_max(self) -> int:
        """e_max for LOG settings (scale is exactly 2**e_max)."""
        return int(round(math.log2(self.scale)))


@dataclass(frozen=True)
class QuantResult:
    w_q: np.ndarray
    delta_w: np.ndarray
    setting: QuantSetting
    codebook_size: int


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def codebook(setting: QuantSetting) -> np.ndarray:
    """All representable float32 values of a setting, sorted ascending."""
    s = float(np.float32(setting.scale))
    if setting.method is QuantMethod.LINEAR:
        if setting.bits == 1:
            return np.array(sorted({np.float32(-s), np.float32(s)}), dtype=np.float32)
        levels = 2 ** (setting.bits - 1) - 1
        q = np.arange(-levels, levels + 1, dtype=np.float64)
        return np.unique((q * s / levels).astype(np.float32))
    e_max = setting.log_exponent_max
    e_min = e_max - (2 ** (setting.bits - 1) - 2)
    exps = np.arange(e_min, e_max + 1, dtype=np.int64)
    mags = np.ldexp(1.0, exps)
    vals = np.concatenate([[0.0], mags, -mags]).astype(np.float32)
    return np.unique(vals)


def _as_weights(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    check_finite(w, "weights")
    return w


def _linear_values(w64: np.ndarray, bits: int, s: float) -> np.ndarray:
    if bits == 1:
        signs = np.where(w64 >= 0.0, 1.0, -1.0)  # sign(0) = +1
        return (signs * s).astype(np.float32)
    levels = 2 ** (bits - 1) - 1
    q = np.clip(_round_half_away(w64 * levels / s), -levels, levels)
    return (q * s / levels).astype(np.float32)


def _log_values(w64: np.ndarray, bits: int, e_max: int) -> np.ndarray:
    e_min = e_max - (2 ** (bits - 1) - 2)
    mag = np.abs(w64)
    out = np.zeros(w64.shape, dtype=np.float64)
    live = mag >= 2.0 ** (e_min - 0.5)
    if np.any(live):
        e = _round_half_away(np.log2(mag[live]))
        e = np.clip(e, e_min, e_max).astype(np.int64)
        out[live] = np.ldexp(np.sign(w64[live]), e)
    return out.astype(np.float32)


def quantize_linear(w: np.ndarray, bits: int) -> QuantResult:
    """Uniform symmetric quantization with per-tensor max-abs scale."""
    w = _as_weights(w)
    if not 1 <= bits <= 8:
        raise ValueError(f"linear quantization needs bits in [1, 8], got {bits}")
    w64 = w.astype(np.float64)
    if bits == 1:
        s = float(np.float32(np.mean(np.abs(w64)))) if w.size else 0.0
    else:
        s = float(np.max(np.abs(w))) if w.size else 0.0
    if s == 0.0:
        setting = QuantSetting(QuantMethod.LINEAR, bits, 1.0)
        zero = np.zeros_like(w)
        return QuantResult(zero, w.copy(), setting, _codebook_len(setting))
    setting = QuantSetting(QuantMethod.LINEAR, bits, s)
    w_q = _linear_values(w64, bits, s)
    return QuantResult(w_q, w - w_q, setting, _codebook_len(setting))


def quantize_log(w: np.ndarray, bits: int) -> QuantResult:
    """Sign--power-of-two quantization; needs sign plus at least one exponent bit."""
    w = _as_weights(w)
    if bits == 1:
        raise ValueError("log quantization is undefined for 1 bit (needs sign + exponent)")
    if not 2 <= bits <= 8:
        raise ValueError(f"log quantization needs bits in [2, 8], got {bits}")
    max_abs = float(np.max(np.abs(w))) if w.size else 0.0
    if max_abs == 0.0:
        setting = QuantSetting(QuantMethod.LOG, bits, 1.0)  # e_max = 0 sentinel
        zero = np.zeros_like(w)
        return QuantResult(zero, w.copy(), setting, _codebook_len(setting))
    e_max = int(math.floor(math.log2(max_abs)))
    setting = QuantSetting(QuantMethod.LOG, bits, float(np.float32(2.0**e_max)))
    w_q = _log_values(w.astype(np.float64), bits, e_max)
    return QuantResult(w_q, w - w_q, setting, _codebook_len(setting))


def quantize(w: np.ndarray, setting: QuantSetting) -> QuantResult:
    """Quantize with an existing setting's recorded scale (no refit)."""
    w = _as_weights(w)
    if not np.any(w):
        zero = np.zeros_like(w)
        return QuantResult(zero, w.copy(), setting, _codebook_len(setting))
    w64 = w.astype(np.float64)
    s = float(np.float32(setting.scale))
    if setting.method is QuantMethod.LINEAR:
        w_q = _linear_values(w64, setting.bits, s)
    else:
        w_q = _log_values(w64, setting.bits, setting.log_exponent_max)
    return QuantResult(w_q, w - w_q, setting, _codebook_len(setting))


def _codebook_len(setting: QuantSetting) -> int:
    if setting.method is QuantMethod.LINEAR:
        return 2 if setting.bits == 1 else 2 ** setting.bits - 1
    return 2 ** setting.bits - 1
