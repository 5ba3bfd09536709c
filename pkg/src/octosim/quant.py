"""Symmetric per-tensor int8 quantisation and fixed-point requantisation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import requantize

INT8_MIN, INT8_MAX = -128, 127


@dataclass(frozen=True)
class QuantSpec:
    scale: float
    zero_point: int = 0
    rounding: str = "half_even"


def quantize(x, scale: Optional[float] = None):
    """Return ``(int8 tensor, scale)``; scale defaults to ``max|x| / 127``.

    An all-zero tensor gets scale 1 by convention.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantise non-finite values")
    if scale is None:
        m = float(np.max(np.abs(x))) if x.size else 0.0
        scale = m / INT8_MAX if m > 0 else 1.0
    q = np.clip(np.rint(x / scale), INT8_MIN, INT8_MAX).astype(np.int8)
    return q, float(scale)


def dequantize(q, scale: float) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * scale


def fixed_multiplier(real: float):
    """Encode a positive real multiplier as ``mult * 2**-shift``, mult < 2**31."""
    if real <= 0:
        raise ValueError("multiplier must be positive")
    frac, exp = math.frexp(real)  # real = frac * 2**exp, frac in [0.5, 1)
    mult = int(round(frac * (1 << 31)))
    shift = 31 - exp
    if mult == 1 << 31:
        mult //= 2
        shift -= 1
    if shift < 0:
        raise ValueError(f"multiplier {real} too large for the requantiser")
    if shift > 62:
        mult >>= shift - 62
        shift = 62
    return mult, shift


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def gelu_lut(pre_scale: float, out_scale: float) -> np.ndarray:
    """256-entry int8 table: index ``q + 128`` -> quantised GeLU(q * pre_scale)."""
    grid = np.arange(-128, 128, dtype=np.float64) * pre_scale
    return np.clip(np.rint(gelu(grid) / out_scale), INT8_MIN, INT8_MAX).astype(np.int8)


@dataclass
class Requant:
    """Writeback stage: int32 accumulator -> int8 (activation, scale, clamp)."""

    mult: int
    shift: int
    relu: bool = False
    lut: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_scales(cls, in_scale: float, w_scale: float, out_scale: float,
                    act: str = "none", act_scale: Optional[float] = None) -> "Requant":
        if act == "gelu":
            pre = act_scale if act_scale is not None else out_scale
            m, s = fixed_multiplier(in_scale * w_scale / pre)
            return cls(m, s, False, gelu_lut(pre, out_scale))
        m, s = fixed_multiplier(in_scale * w_scale / out_scale)
        return cls(m, s, act == "relu")

    def apply(self, acc) -> np.ndarray:
        q = requantize(acc, self.mult, self.shift, relu=self.relu)
        if self.lut is not None:
            q = self.lut[q.astype(np.int16) + 128]
        return q

    def to_dict(self) -> dict:
        d = {"mult": self.mult, "shift": self.shift, "relu": self.relu}
        if self.lut is not None:
            d["lut"] = self.lut.astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Requant":
        lut = np.asarray(d["lut"], dtype=np.int8) if "lut" in d else None
        return cls(int(d["mult"]), int(d["shift"]), bool(d["relu"]), lut)
