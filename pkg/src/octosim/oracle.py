"""Golden models, written independently of the engines and the compiler.

Integer inference uses plain int64 arithmetic: direct sliding-window
convolution, add-trick rounding for requantisation and a scalar softmax.
None of the tiled, systolic or SIMD code paths are reused, so agreement
with the simulator is a real cross-check. The feature oracle recomputes
the accumulators from the parsed packets with Python integers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .compiler.ir import (EXP_MIN, EXP_STEP_BITS, SOFTMAX_FRAC_BITS, QAttention, QFlatten, QLinear,
                          QModel, QPool)

# ---------------------------------------------------------------------------
# integer primitives
# ---------------------------------------------------------------------------


def oracle_requant(acc, mult: int, shift: int, relu: bool = False, lut=None) -> np.ndarray:
    """``clamp(round_half_even(acc * mult / 2**shift))`` via the add trick."""
    p = np.asarray(acc, dtype=object) * mult
    out = np.empty(p.shape, dtype=np.int64)
    for idx, v in np.ndenumerate(p):
        v = int(v)
        if shift:
            half = 1 << (shift - 1)
            r = (v + half - 1 + ((v >> shift) & 1)) >> shift
        else:
            r = v
        r = min(max(r, -128), 127)
        if relu and r < 0:
            r = 0
        if lut is not None:
            r = int(lut[r + 128])
        out[idx] = r
    return out


def _rq(acc, rq):
    return oracle_requant(acc, rq.mult, rq.shift, rq.relu, rq.lut)


def direct_conv1d(x, w, s, stride, padding):
    """x: (L, ic); w: (s*ic, oc) tap-major -> (windows, oc) int64."""
    x = np.asarray(x, dtype=np.int64)
    L, ic = x.shape
    oc = w.shape[1]
    w3 = np.asarray(w, dtype=np.int64).reshape(s, ic, oc)
    nwin = (L + 2 * padding - s) // stride + 1
    out = np.zeros((nwin, oc), dtype=np.int64)
    for i in range(nwin):
        for t in range(s):
            pos = i * stride - padding + t
            if 0 <= pos < L:
                out[i] += x[pos] @ w3[t]
    return out


def direct_maxpool(x, stride, ceil_mode=True):
    x = np.asarray(x)
    L = x.shape[0]
    n = -(-L // stride) if ceil_mode else L // stride
    return np.stack([x[i * stride:min((i + 1) * stride, L)].max(axis=0) for i in range(n)])




def oracle_softmax_q15(scores: Sequence[int], mult: int, shift: int) -> List[int]:
    """Scalar fixed-point softmax. Probabilities in Q15 summing to exactly 2**15.

    Each score's distance to the row maximum maps to the 1/32 exponent grid
    as ``round_half_even((s - top) * mult / 2**shift)``.
    """
    import math

    one = 1 << SOFTMAX_FRAC_BITS
    top = max(scores)
    es = []
    for s in scores:
        v = (s - top) * mult
        half = 1 << (shift - 1)
        t = (v + half - 1 + ((v >> shift) & 1)) >> shift
        es.append(0 if t < EXP_MIN else int(round(math.exp(t / (1 << EXP_STEP_BITS)) * (1 << 16))))
    total = sum(es)
    raw = [e * one // total for e in es]
    rem = [(e * one) % total for e in es]
    short = one - sum(raw)
    order = sorted(range(len(es)), key=lambda i: (-rem[i], i))
    for i in order[:short]:
        raw[i] += 1
    return raw


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def oracle_infer(model: QModel, x) -> List[np.ndarray]:
    """Every layer's output for one sample ``x`` (int8, model input shape)."""
    x = np.asarray(x, dtype=np.int64).reshape(model.input_shape)
    outs = []
    for layer in model.layers:
        if isinstance(layer, QLinear):
            if layer.kind == "conv":
                acc = direct_conv1d(x, layer.w, layer.kernel_size, layer.stride, layer.padding)
            else:
                acc = x @ np.asarray(layer.w, dtype=np.int64)
            x = acc if layer.rq is None else _rq(acc, layer.rq)
        elif isinstance(layer, QPool):
            x = direct_maxpool(x, layer.stride, layer.ceil_mode)
        elif isinstance(layer, QFlatten):
            x = x.reshape(1, -1)
        elif isinstance(layer, QAttention):
            q = _rq(x @ layer.wq.astype(np.int64), layer.rq_q)
            k = _rq(x @ layer.wk.astype(np.int64), layer.rq_k)
            v = _rq(x @ layer.wv.astype(np.int64), layer.rq_v)
            s = q @ k.T
            p = np.array([oracle_softmax_q15([int(a) for a in row], layer.sm_mult, layer.sm_shift) for row in s],
                         dtype=np.int64)
            p8 = _rq(p, layer.p_rq)
            x = _rq(p8 @ v, layer.rq_o)
        else:
            raise TypeError(type(layer).__name__)
        outs.append(x)
    return outs


def verdict(scores) -> int:
    """Index of the largest score; ties go to the lowest index."""
    best, arg = None, 0
    for i, s in enumerate(np.asarray(scores).reshape(-1)):
        if best is None or int(s) > best:
            best, arg = int(s), i
    return arg


# ---------------------------------------------------------------------------
# feature accumulators
# ---------------------------------------------------------------------------


@dataclass
class GoldenFlow:
    packets: int = 0
    sum_size: int = 0
    max_size: int = 0
    min_size: int = 0xFFFF
    sum_intv: int = 0
    max_intv: int = 0
    min_intv: int = 0xFFFFFFFF
    last_ts: int = 0
    protocol: int = 0
    last_flags: int = 0


def golden_accumulate(headers, threshold: int, time_unit_ns: int = 1000) -> Dict[bytes, GoldenFlow]:
    """Accumulators of each flow's first ``threshold`` packets, keyed by canonical tuple bytes.

    Counters saturate at their field widths: 16-bit sizes, 32-bit sums and
    intervals, 16-bit count.
    """
    flows: Dict[bytes, GoldenFlow] = {}
    for h in headers:
        key = h.tuple.key_bytes()
        g = flows.setdefault(key, GoldenFlow())
        if g.packets >= threshold:
            continue
        size = min(h.pkt_size, 0xFFFF)
        intv = 0 if g.packets == 0 else min(max(h.arrival_ns - g.last_ts, 0) // time_unit_ns, 0xFFFFFFFF)
        g.sum_size = min(g.sum_size + size, 0xFFFFFFFF)
        g.max_size = max(g.max_size, size)
        g.min_size = min(g.min_size, size)
        g.sum_intv = min(g.sum_intv + intv, 0xFFFFFFFF)
        g.max_intv = max(g.max_intv, intv)
        if g.packets > 0:
            g.min_intv = min(g.min_intv, intv)
        g.protocol = h.tuple.protocol
        g.last_flags = h.flags & 0xFF
        g.last_ts = h.arrival_ns
        g.packets += 1
    return flows


def golden_word(g: GoldenFlow, layout: Dict[str, tuple]) -> bytes:
    """Pack a flow's accumulators into a 16-byte feature word per ``layout``."""
    values = dict(sum_size=g.sum_size, sum_intv=g.sum_intv, max_size=g.max_size,
                  min_size=g.min_size, max_intv=g.max_intv, min_intv=g.min_intv,
                  count=min(g.packets, 0xFFFF), protocol=g.protocol, last_flags=g.last_flags)
    word = bytearray(16)
    for name, (dst, width) in layout.items():
        word[dst:dst + width] = values[name].to_bytes(width, "little")
    return bytes(word)
